//! Moment-matching starting values for the sampler.

use crate::dataset::MortalityDataset;
use crate::error::{Error, Result};
use crate::model::{laplace_quantile, CauseId, CellIndex, ModelParams, TrendConstants};

use super::expected_intensities;

const SIGMA2_FLOOR: f64 = 1e-4;

/// Rough parameter estimates used as chain starting points.
///
/// * `u_k` is the log ratio of cause-`k` to cause-0 deaths over all years,
///   each count smoothed by `+0.5`; `v = 0`.
/// * `alpha`, `beta` come from an ordinary least-squares fit of the Laplace
///   quantile of the crude death rate against `T(t)`. Zero death counts are
///   replaced by `0.5` so the quantile stays finite.
/// * `sigma2_k` is the sample variance of `n_k(t) / rho_k(t)` minus the
///   Poisson part `mean(1 / rho_k(t))`, floored at `1e-4`.
pub fn init_params_moment_matching(data: &MortalityDataset, trends: &TrendConstants) -> Result<ModelParams> {
    data.validate()?;
    let a = data.age_groups();
    let k = data.causes();
    let years = data.years();
    let mut params = ModelParams::flat(a, k, *trends, 1.0);

    for cell in CellIndex::all(a) {
        let c = cell.linear();
        let live: Vec<usize> = (0..years).filter(|&y| data.population(c, y) > 0).collect();
        if live.is_empty() {
            return Err(Error::Coverage(format!(
                "cell {cell} has zero population in every year"
            )));
        }

        let total = |cause: usize| -> f64 { (0..years).map(|y| data.deaths(c, cause, y)).sum::<u64>() as f64 + 0.5 };
        let base = total(0);
        for cause in 1..=k {
            params.weights.u[c][cause] = (total(cause) / base).ln();
        }

        let tr = params.death_prob[c].trend;
        let points: Vec<(f64, f64)> = live
            .iter()
            .map(|&y| {
                let m = data.population(c, y) as f64;
                let d = (data.cell_total(c, y) as f64).max(0.5);
                let rate = (d / m).min(1.0 - 0.5 / m);
                (tr.apply((y + 1) as f64), laplace_quantile(rate))
            })
            .collect();
        let (alpha, beta) = least_squares(&points);
        params.death_prob[c].alpha = alpha;
        params.death_prob[c].beta = beta;
    }

    let grid = expected_intensities(data, &params)?;
    for cause in 1..=k {
        let mut ratios = Vec::with_capacity(years);
        let mut inv = Vec::with_capacity(years);
        for y in 0..years {
            let rho = grid.cause_total(cause, y);
            if rho > 0.0 {
                ratios.push(data.cause_total(CauseId(cause), y) as f64 / rho);
                inv.push(1.0 / rho);
            }
        }
        let sigma2 = if ratios.len() >= 2 {
            let n = ratios.len() as f64;
            let mean = ratios.iter().sum::<f64>() / n;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var - inv.iter().sum::<f64>() / n
        } else {
            SIGMA2_FLOOR
        };
        params.variances.sigma2[cause - 1] = sigma2.max(SIGMA2_FLOOR);
    }
    params.validate()?;
    Ok(params)
}

/// Intercept and slope of `y` on `x`; slope 0 if `x` does not vary.
fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx > 0.0 {
        let b = sxy / sxx;
        (my - b * mx, b)
    } else {
        (my, 0.0)
    }
}
