//! Forward simulation of risk factors, death-count panels and portfolio
//! losses.
//!
//! Risk factors are drawn afresh for every year. Given them, counts are
//! independent Poisson. Poisson counts can exceed a cell's population, in
//! which case they are capped and the event is counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MortalityDataset;
use crate::error::{Error, Result};
use crate::model::{cause_weights_into, death_probability, CellIndex, ModelParams, RiskFactorVariances};
use crate::panjer::Portfolio;

/// Simulations per independent random stream in
/// [`simulate_portfolio_loss`].
pub const SIMS_PER_STREAM: usize = 10_000;

/// Everything needed to generate a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub params: ModelParams,
    pub base_year: i32,
    /// `population[cell][y]`
    pub population: Vec<Vec<u64>>,
    pub seed: u64,
}

impl SimulationSpec {
    /// Same population in every cell and year.
    pub fn constant(params: ModelParams, population: u64, base_year: i32, years: usize, seed: u64) -> Self {
        let cells = params.cells();
        SimulationSpec {
            params,
            base_year,
            population: vec![vec![population; years]; cells],
            seed,
        }
    }

    pub fn years(&self) -> usize {
        self.population.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.population.len() != self.params.cells() {
            return Err(Error::Shape(format!(
                "{} population rows for {} cells",
                self.population.len(),
                self.params.cells()
            )));
        }
        if self.population.iter().any(|row| row.len() != self.years()) {
            return Err(Error::Shape("population rows differ in length".into()));
        }
        Ok(())
    }
}

/// Counts of cell-years whose simulated deaths exceeded the population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub cell_years: u64,
    pub cap_events: u64,
    /// Deaths removed by capping.
    pub capped_deaths: u64,
}

impl SimulationStats {
    pub fn cap_fraction(&self) -> f64 {
        if self.cell_years == 0 {
            0.0
        } else {
            self.cap_events as f64 / self.cell_years as f64
        }
    }
}

/// One draw of `Lambda_1..=Lambda_K`, each gamma with mean 1 and variance
/// `sigma2_k`.
pub fn sample_risk_factors<R: Rng + ?Sized>(variances: &RiskFactorVariances, rng: &mut R) -> Result<Vec<f64>> {
    variances
        .sigma2
        .iter()
        .map(|&s2| {
            let g = Gamma::new(1.0 / s2, s2)
                .map_err(|e| Error::InvalidParameter(format!("risk factor variance {s2}: {e}")))?;
            Ok(g.sample(rng))
        })
        .collect()
}

/// Poisson draw that accepts a zero mean.
fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "expected intensity {mean} is not valid"
        )));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidParameter(format!("intensity {mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Synthetic panel: per year draw the risk factors, then per cell and cause
/// `n ~ Poisson(rho * Lambda_k)` (`Lambda_0 = 1`). A cell-year whose total
/// exceeds its population is capped cause by cause in order.
pub fn sample_death_counts<R: Rng + ?Sized>(
    spec: &SimulationSpec,
    rng: &mut R,
) -> Result<(MortalityDataset, SimulationStats)> {
    spec.validate()?;
    let p = &spec.params;
    let years = spec.years();
    let k1 = p.causes() + 1;
    let mut data = MortalityDataset::zeros(p.age_groups(), p.causes(), spec.base_year, years);
    let mut stats = SimulationStats::default();
    let mut w = vec![0.0; k1];
    for y in 0..years {
        let t = (y + 1) as f64;
        let lambda = sample_risk_factors(&p.variances, rng)?;
        for cell in CellIndex::all(p.age_groups()) {
            let c = cell.linear();
            let m = spec.population[c][y];
            data.set_population(c, y, m);
            let q = death_probability(cell, t, p);
            cause_weights_into(cell, t, p, &mut w);
            let mut room = m;
            let mut capped = false;
            for k in 0..k1 {
                let factor = if k == 0 { 1.0 } else { lambda[k - 1] };
                let n = poisson(m as f64 * q * w[k] * factor, rng)?;
                if n > room {
                    capped = true;
                    stats.capped_deaths += n - room;
                }
                let n = n.min(room);
                room -= n;
                data.set_deaths(c, k, y, n);
            }
            stats.cell_years += 1;
            stats.cap_events += capped as u64;
        }
    }
    Ok((data, stats))
}

/// [`sample_death_counts`] with a generator seeded from `spec.seed`.
pub fn simulate_dataset(spec: &SimulationSpec) -> Result<(MortalityDataset, SimulationStats)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_death_counts(spec, &mut rng)
}

/// Empirical loss distribution from Monte Carlo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    /// `counts[n]` simulations ended with a loss of `n` units.
    pub counts: Vec<u64>,
    pub n_sims: u64,
}

impl LossSample {
    pub fn pmf(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n_sims as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(n, &c)| n as f64 * c as f64)
            .sum::<f64>()
            / self.n_sims as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(n, &c)| (n as f64 - m).powi(2) * c as f64)
            .sum();
        ss / (self.n_sims as f64 - 1.0).max(1.0)
    }

    fn add(&mut self, loss: usize) {
        if loss >= self.counts.len() {
            self.counts.resize(loss + 1, 0);
        }
        self.counts[loss] += 1;
        self.n_sims += 1;
    }

    fn merge(mut self, other: LossSample) -> LossSample {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.n_sims += other.n_sims;
        self
    }
}

/// Brute-force loss simulation at model time `t`.
///
/// Each simulation draws the risk factors and then Poisson death counts and
/// adds up exposure times deaths. Policies with the same exposure are pooled
/// into one Poisson draw, which has the same distribution as drawing them
/// one by one. Block `b` of [`SIMS_PER_STREAM`] simulations uses stream `b`
/// of a generator seeded with `seed`, so the result does not depend on the
/// number of threads.
pub fn simulate_portfolio_loss(
    portfolio: &Portfolio,
    params: &ModelParams,
    t: f64,
    seed: u64,
    n_sims: usize,
) -> Result<LossSample> {
    if n_sims == 0 {
        return Err(Error::InvalidParameter("at least one simulation is required".into()));
    }
    params.validate()?;
    let k1 = params.causes() + 1;
    let mut by_exposure: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut w = vec![0.0; k1];
    for policy in &portfolio.policies {
        if policy.cell.age_group == 0 || policy.cell.age_group > params.age_groups() {
            return Err(Error::Shape(format!(
                "policy cell {} is outside the model grid",
                policy.cell
            )));
        }
        let q = death_probability(policy.cell, t, params);
        cause_weights_into(policy.cell, t, params, &mut w);
        let slot = match by_exposure.iter().position(|(e, _)| *e == policy.exposure) {
            Some(i) => i,
            None => {
                by_exposure.push((policy.exposure, vec![0.0; k1]));
                by_exposure.len() - 1
            }
        };
        for (acc, wk) in by_exposure[slot].1.iter_mut().zip(&w) {
            *acc += policy.count as f64 * q * wk;
        }
    }
    by_exposure.sort_by_key(|(e, _)| *e);

    let blocks = n_sims.div_ceil(SIMS_PER_STREAM);
    let partial = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let sims = SIMS_PER_STREAM.min(n_sims - b * SIMS_PER_STREAM);
            let mut out = LossSample {
                counts: Vec::new(),
                n_sims: 0,
            };
            for _ in 0..sims {
                let lambda = sample_risk_factors(&params.variances, &mut rng)?;
                let mut loss = 0u64;
                for (exposure, rates) in &by_exposure {
                    let mean = rates[0] + rates[1..].iter().zip(&lambda).map(|(r, l)| r * l).sum::<f64>();
                    loss += exposure * poisson(mean, &mut rng)?;
                }
                out.add(loss as usize);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partial.into_iter().fold(
        LossSample {
            counts: vec![0],
            n_sims: 0,
        },
        LossSample::merge,
    ))
}
