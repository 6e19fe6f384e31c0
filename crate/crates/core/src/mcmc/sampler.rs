use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::MortalityDataset;
use crate::error::{Error, Result};
use crate::layout::{FreeLayout, ParamKind};
use crate::likelihood::IncrementalLikelihood;
use crate::model::ModelParams;

use super::truncnorm::{truncated_normal_log_density, truncated_normal_sample};
use super::{Acceptance, PosteriorSamples, SamplerConfig, ALL_BLOCKS};

const LOCATION_SD_FALLBACK: f64 = 0.1;
const LOCATION_SD_MAX: f64 = 10.0;

/// Proposal scales `2.4 / sqrt(-d2 log L / dx2)` from finite differences of
/// the likelihood at `params`, one per free parameter.
pub fn initial_proposal_sd(data: &MortalityDataset, params: &ModelParams, sigma2_max: f64) -> Result<Vec<f64>> {
    let mut inc = IncrementalLikelihood::new(data, params)?;
    let layout = inc.layout();
    let mut out = Vec::with_capacity(layout.len());
    for i in 0..layout.len() {
        let kind = layout.kind(i);
        let x = layout.get(params, kind);
        let is_var = matches!(kind, ParamKind::Sigma2 { .. });
        let h = if is_var { 1e-3 * x } else { 1e-4 * (1.0 + x.abs()) };
        let up = inc.propose(kind, x + h);
        inc.reject();
        let down = inc.propose(kind, x - h);
        inc.reject();
        let curvature = -(up + down) / (h * h);
        let sd = if curvature > 0.0 && curvature.is_finite() {
            2.4 / curvature.sqrt()
        } else if is_var {
            0.5 * x
        } else {
            LOCATION_SD_FALLBACK
        };
        let cap = if is_var { 0.5 * sigma2_max } else { LOCATION_SD_MAX };
        out.push(sd.min(cap));
    }
    Ok(out)
}

/// One Metropolis-Hastings step on free parameter `i`; returns acceptance.
fn step<R: Rng + ?Sized>(
    inc: &mut IncrementalLikelihood<'_>,
    layout: &FreeLayout,
    i: usize,
    sd: f64,
    sigma2_max: f64,
    rng: &mut R,
) -> Result<bool> {
    let kind = layout.kind(i);
    let x = layout.get(inc.params(), kind);
    let (y, hastings) = match kind {
        ParamKind::Sigma2 { .. } => {
            let y = truncated_normal_sample(x, sd, 0.0, sigma2_max, rng)?;
            let back = truncated_normal_log_density(x, y, sd, 0.0, sigma2_max)?;
            let forth = truncated_normal_log_density(y, x, sd, 0.0, sigma2_max)?;
            (y, back - forth)
        }
        _ => {
            let z: f64 = StandardNormal.sample(rng);
            (x + sd * z, 0.0)
        }
    };
    let log_ratio = inc.propose(kind, y) + hastings;
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        inc.accept();
        Ok(true)
    } else {
        inc.reject();
        Ok(false)
    }
}

fn sweep<R: Rng + ?Sized>(
    inc: &mut IncrementalLikelihood<'_>,
    active: &[usize],
    sd: &[f64],
    sigma2_max: f64,
    rng: &mut R,
    accepted: &mut [bool],
) -> Result<()> {
    let current = inc.value();
    if !current.is_finite() {
        return Err(Error::Sampler(format!("log-likelihood at current state is {current}")));
    }
    let layout = inc.layout();
    for &i in active {
        accepted[i] = step(inc, &layout, i, sd[i], sigma2_max, rng)?;
    }
    inc.refresh();
    Ok(())
}

fn active_indices(layout: &FreeLayout, cfg: &SamplerConfig) -> Vec<usize> {
    (0..layout.len())
        .filter(|&i| cfg.blocks.contains(&layout.kind(i).block()))
        .collect()
}

fn prepare(data: &MortalityDataset, init: &ModelParams, cfg: &SamplerConfig) -> Result<(ModelParams, Vec<f64>)> {
    let mut start = init.clone();
    start.validate()?;
    start.fix_gauge();
    let layout = FreeLayout::of(&start);
    cfg.validate(&layout)?;
    if let Some(bad) = start.variances.sigma2.iter().position(|&s| s >= cfg.sigma2_max) {
        return Err(Error::InvalidParameter(format!(
            "starting sigma2_k{} is outside (0, {})",
            bad + 1,
            cfg.sigma2_max
        )));
    }
    let sd = match &cfg.proposal_sd {
        Some(sd) => sd.clone(),
        None => initial_proposal_sd(data, &start, cfg.sigma2_max)?,
    };
    Ok((start, sd))
}

/// One sweep from `current`; returns the new state and, per free
/// parameter, whether its proposal was accepted.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    current: &ModelParams,
    data: &MortalityDataset,
    cfg: &SamplerConfig,
    proposal_sd: &[f64],
    rng: &mut R,
) -> Result<(ModelParams, Vec<bool>)> {
    current.validate()?;
    if !current.is_gauge_fixed() {
        return Err(Error::InvalidParameter("gauge coordinates must be zero".into()));
    }
    let layout = FreeLayout::of(current);
    let mut cfg = cfg.clone();
    cfg.proposal_sd = Some(proposal_sd.to_vec());
    cfg.validate(&layout)?;
    let mut inc = IncrementalLikelihood::new(data, current)?;
    let active = active_indices(&layout, &cfg);
    let mut accepted = vec![false; layout.len()];
    sweep(&mut inc, &active, proposal_sd, cfg.sigma2_max, rng, &mut accepted)?;
    Ok((inc.params().clone(), accepted))
}

pub(crate) fn run_chain_with_id(
    data: &MortalityDataset,
    init: &ModelParams,
    cfg: &SamplerConfig,
    chain_id: usize,
) -> Result<PosteriorSamples> {
    let (start, mut sd) = prepare(data, init, cfg)?;
    let layout = FreeLayout::of(&start);
    let width = layout.len();
    let mut inc = IncrementalLikelihood::new(data, &start)?;
    let active = active_indices(&layout, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut accepted = vec![false; width];
    let mut window_hits = vec![0usize; width];
    let mut kept_hits = vec![0usize; width];
    let kept_sweeps = cfg.n_steps - cfg.burn_in;
    let mut values = Vec::with_capacity(kept_sweeps.div_ceil(cfg.thin) * width);

    for s in 0..cfg.n_steps {
        sweep(&mut inc, &active, &sd, cfg.sigma2_max, &mut rng, &mut accepted)?;
        if s < cfg.burn_in {
            for &i in &active {
                window_hits[i] += accepted[i] as usize;
            }
            if (s + 1) % cfg.adapt_window == 0 {
                for &i in &active {
                    let rate = window_hits[i] as f64 / cfg.adapt_window as f64;
                    if rate > 0.35 {
                        sd[i] *= 1.1;
                    } else if rate < 0.15 {
                        sd[i] *= 0.9;
                    }
                    window_hits[i] = 0;
                }
            }
        } else {
            for &i in &active {
                kept_hits[i] += accepted[i] as usize;
            }
            if (s - cfg.burn_in).is_multiple_of(cfg.thin) {
                let p = inc.params();
                values.extend((0..width).map(|i| layout.get(p, layout.kind(i))));
            }
        }
    }

    let per_parameter: Vec<f64> = kept_hits.iter().map(|&h| h as f64 / kept_sweeps as f64).collect();
    let per_block = ALL_BLOCKS
        .iter()
        .filter(|b| cfg.blocks.contains(b))
        .map(|&b| {
            let idx: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| layout.kind(i).block() == b)
                .collect();
            let rate = if idx.is_empty() {
                0.0
            } else {
                idx.iter().map(|&i| per_parameter[i]).sum::<f64>() / idx.len() as f64
            };
            (b, rate)
        })
        .collect();

    PosteriorSamples::from_rows(
        chain_id,
        cfg.seed,
        cfg.clone(),
        data.base_year(),
        start,
        Acceptance {
            per_parameter,
            per_block,
        },
        sd,
        values,
    )
}

/// Runs `cfg.n_steps` sweeps from `init` and keeps the post-burn-in draws.
///
/// Proposal scales adapt during burn-in only. Output is a function of
/// `(data, init, cfg)` alone.
pub fn run_chain(data: &MortalityDataset, init: &ModelParams, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    run_chain_with_id(data, init, cfg, 0)
}

/// Runs independent chains concurrently; chain `i` starts from `inits[i]`
/// with `cfgs[i]`. Seeds must be distinct.
pub fn run_chains_parallel(
    data: &MortalityDataset,
    inits: &[ModelParams],
    cfgs: &[SamplerConfig],
) -> Result<Vec<PosteriorSamples>> {
    if inits.is_empty() || inits.len() != cfgs.len() {
        return Err(Error::InvalidParameter(format!(
            "need one config per chain and at least one chain, got {} starts and {} configs",
            inits.len(),
            cfgs.len()
        )));
    }
    let mut seeds: Vec<u64> = cfgs.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("chain seeds must be distinct".into()));
    }
    inits
        .par_iter()
        .zip(cfgs.par_iter())
        .enumerate()
        .map(|(i, (init, cfg))| run_chain_with_id(data, init, cfg, i))
        .collect()
}
