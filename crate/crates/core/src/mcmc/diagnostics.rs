//! Convergence diagnostics and approximate model checks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, StudentsT};

use crate::dataset::MortalityDataset;
use crate::error::{Error, Result};
use crate::layout::Block;
use crate::likelihood::{cause_aggregates, map_risk_factor};
use crate::stats;

use super::PosteriorSamples;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Mean post-burn-in acceptance over chains.
    pub acceptance: f64,
    /// Mean lag-1 autocorrelation over chains; `None` for constant chains.
    pub lag1_autocorrelation: Option<f64>,
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
    /// Set when every draw is identical and ESS/R-hat are undefined.
    pub degenerate: bool,
}

/// Checks on the MAP risk-factor series of one cause.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorValidation {
    pub cause: usize,
    pub sigma2: f64,
    pub map_series: Vec<f64>,
    pub lag1_autocorrelation: f64,
    /// `2 / sqrt(T)`.
    pub band: f64,
    pub serially_correlated: bool,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelation {
    pub cause_a: usize,
    pub cause_b: usize,
    pub correlation: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    /// Rejected at the 5% level.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub chains: usize,
    pub draws_per_chain: Vec<usize>,
    pub acceptance_by_block: Vec<(Block, f64)>,
    pub parameters: Vec<ParameterDiagnostics>,
    pub factors: Vec<FactorValidation>,
    pub cross_correlations: Vec<CrossCorrelation>,
}

impl DiagnosticsReport {
    /// Largest split R-hat over non-degenerate parameters.
    pub fn max_rhat(&self) -> Option<f64> {
        self.parameters.iter().filter_map(|p| p.rhat).reduce(f64::max)
    }
}

/// Biased autocovariance at lags `0..n` via zero-padded FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = stats::mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Lag-1 sample autocorrelation; `None` for fewer than two values or a
/// constant series.
pub fn autocorrelation_lag1(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = stats::mean(x);
    let denom: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if !(denom > 0.0) {
        return None;
    }
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Some(num / denom)
}

/// Multi-chain effective sample size with Geyer's initial monotone positive
/// sequence. Chains are truncated to the shortest. `None` when undefined
/// (fewer than four draws, or zero variance).
pub fn effective_sample_size(chains: &[&[f64]]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min()?;
    if n < 4 {
        return None;
    }
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n])).collect();
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(&c[..n])).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { stats::variance(&means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if !(var_plus > 0.0) || !(w > 0.0) {
        return None;
    }
    let rho = |t: usize| 1.0 - (w - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if !(pair > 0.0) {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    Some(total / tau.max(1.0 / total.log10().max(1.0)))
}

/// Split-chain potential scale reduction. `None` when the within-chain
/// variance is zero.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    let n = chains.iter().map(|c| c.len()).min()? / 2;
    if n < 2 {
        return None;
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let len = c.len();
            [&c[..n], &c[len - n..]]
        })
        .collect();
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(h)).collect();
    let w = halves.iter().map(|h| stats::variance(h)).sum::<f64>() / halves.len() as f64;
    if !(w > 0.0) {
        return None;
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + stats::variance(&means);
    Some((var_plus / w).sqrt())
}

/// Survival function of the Kolmogorov distribution with Stephens'
/// finite-sample correction.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let x = stats::sorted(sample);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            f64::max((i + 1) as f64 / n - f, f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Convergence report for `chains` plus model checks on the MAP risk-factor
/// series at the posterior mean.
pub fn diagnostics(chains: &[PosteriorSamples], data: &MortalityDataset) -> Result<DiagnosticsReport> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidParameter("diagnostics need at least one chain".into()))?;
    let layout = first.layout();
    if chains.iter().any(|c| c.layout() != layout) {
        return Err(Error::Shape("chains have different parameter layouts".into()));
    }
    if chains.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidParameter("every chain needs at least one draw".into()));
    }
    let names = layout.names();
    let mut parameters = Vec::with_capacity(layout.len());
    let mut posterior_mean = Vec::with_capacity(layout.len());
    for (j, name) in names.into_iter().enumerate() {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let pooled: Vec<f64> = cols.concat();
        let sorted = stats::sorted(&pooled);
        let mean = stats::mean(&pooled);
        posterior_mean.push(mean);
        let degenerate = sorted[0] == sorted[sorted.len() - 1];
        let lags: Vec<f64> = refs.iter().filter_map(|c| autocorrelation_lag1(c)).collect();
        parameters.push(ParameterDiagnostics {
            name,
            mean,
            sd: stats::variance(&pooled).sqrt(),
            q05: stats::nearest_rank(&sorted, 0.05),
            q50: stats::nearest_rank(&sorted, 0.5),
            q95: stats::nearest_rank(&sorted, 0.95),
            acceptance: chains.iter().map(|c| c.acceptance.per_parameter[j]).sum::<f64>() / chains.len() as f64,
            lag1_autocorrelation: (!lags.is_empty()).then(|| stats::mean(&lags)),
            ess: effective_sample_size(&refs),
            rhat: split_rhat(&refs),
            degenerate,
        });
    }

    let acceptance_by_block = first
        .acceptance
        .per_block
        .iter()
        .map(|&(b, _)| {
            let r = chains.iter().filter_map(|c| c.acceptance.block(b)).sum::<f64>() / chains.len() as f64;
            (b, r)
        })
        .collect();

    let mut params = first.template.clone();
    layout.apply(&mut params, &posterior_mean);
    let agg = cause_aggregates(data, &params)?;
    let years = data.years();
    let band = 2.0 / (years as f64).sqrt();
    let mut factors = Vec::new();
    for k in 0..data.causes() {
        let s2 = params.variances.sigma2[k];
        let series: Vec<f64> = (0..years)
            .map(|y| map_risk_factor(agg.deaths[k][y], agg.intensity[k][y], s2).mode)
            .collect();
        let lag1 = autocorrelation_lag1(&series).unwrap_or(0.0);
        let gamma =
            Gamma::new(1.0 / s2, 1.0 / s2).map_err(|e| Error::InvalidParameter(format!("gamma reference: {e}")))?;
        let d = ks_statistic(&series, |x| gamma.cdf(x));
        factors.push(FactorValidation {
            cause: k + 1,
            sigma2: s2,
            map_series: series,
            lag1_autocorrelation: lag1,
            band,
            serially_correlated: lag1.abs() > band,
            ks_statistic: d,
            ks_p_value: ks_p_value(d, years),
        });
    }

    let mut cross_correlations = Vec::new();
    if years > 2 {
        let t_dist = StudentsT::new(0.0, 1.0, (years - 2) as f64)
            .map_err(|e| Error::InvalidParameter(format!("t reference: {e}")))?;
        for a in 0..factors.len() {
            for b in a + 1..factors.len() {
                let r = stats::pearson(&factors[a].map_series, &factors[b].map_series).unwrap_or(0.0);
                let t = if r.abs() < 1.0 {
                    r * ((years - 2) as f64 / (1.0 - r * r)).sqrt()
                } else {
                    r.signum() * f64::MAX
                };
                let p = (2.0 * (1.0 - t_dist.cdf(t.abs()))).clamp(0.0, 1.0);
                cross_correlations.push(CrossCorrelation {
                    cause_a: a + 1,
                    cause_b: b + 1,
                    correlation: r,
                    t_statistic: t,
                    p_value: p,
                    significant: p < 0.05,
                });
            }
        }
    }

    Ok(DiagnosticsReport {
        chains: chains.len(),
        draws_per_chain: chains.iter().map(|c| c.len()).collect(),
        acceptance_by_block,
        parameters,
        factors,
        cross_correlations,
    })
}
