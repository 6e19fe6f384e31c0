//! Closed-form likelihood of the gamma-mixed Poisson death-count model.
//!
//! Given the factors `Lambda_k(t)`, cell counts are independent Poisson with
//! intensities `rho_{c,k}(t) * Lambda_k(t)`. Integrating out the mean-one
//! gamma factors gives, per year `t` and risk factor `k >= 1`,
//!
//! ```text
//! Gamma(r + n_k) / (Gamma(r) sigma2^r (r + rho_k)^(r + n_k)) * prod_c rho_{c,k}^n_{c,k} / n_{c,k}!
//! ```
//!
//! with `r = 1 / sigma2_k`, `n_k = sum_c n_{c,k}` and `rho_k = sum_c rho_{c,k}`.
//! The idiosyncratic cause 0 contributes ordinary Poisson factors.
//!
//! Everything is evaluated in log space with log-gamma. A zero intensity
//! paired with a positive count gives `-inf`, which samplers treat as an
//! impossible state rather than an error.

mod cache;
mod init;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::MortalityDataset;
use crate::error::{Error, Result};
use crate::model::{
    laplace_cdf_unchecked, laplace_log_cdf, log_softmax_in_place, softmax_in_place, CauseId, CellIndex, ModelParams,
    RiskFactorVariances,
};

pub use cache::IncrementalLikelihood;
pub use init::init_params_moment_matching;

/// `n * ln_x`, with `0 * ln 0 = 0`.
#[inline]
pub(crate) fn xlogy(n: f64, ln_x: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n * ln_x
    }
}

/// `ln n!`
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `ln Gamma(r + n) - ln Gamma(r) - n ln(r + rho)`.
///
/// For large `r` the two log-gamma values are huge and nearly equal, so the
/// difference is formed analytically from the Stirling series instead.
pub(crate) fn ln_gamma_ratio_shifted(r: f64, n: f64, rho: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    if r >= 50.0 {
        let rn = r + n;
        let series = |x: f64| {
            let x2 = x * x;
            1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2)
        };
        (r - 0.5) * (n / r).ln_1p() - n + n * ((n - rho) / (r + rho)).ln_1p() + (series(rn) - series(r))
    } else {
        ln_gamma(r + n) - ln_gamma(r) - n * (r + rho).ln()
    }
}

/// The per-factor term of the integrated likelihood that depends on the
/// year totals only:
/// `ln Gamma(r+n) - ln Gamma(r) - r ln sigma2 - (r+n) ln(r+rho)`.
#[inline]
pub(crate) fn mixed_factor_term(sigma2: f64, n: f64, rho: f64) -> f64 {
    let r = 1.0 / sigma2;
    ln_gamma_ratio_shifted(r, n, rho) - r * (sigma2 * rho).ln_1p()
}

/// Poisson log-pmf given `ln rho`.
#[inline]
fn poisson_log_pmf_ln(n: u64, rho: f64, ln_rho: f64) -> f64 {
    xlogy(n as f64, ln_rho) - rho - ln_factorial(n)
}

/// Log-pmf of the gamma-mixed Poisson (negative binomial) with mean `rho`
/// and variance `rho + sigma2 * rho^2`.
pub fn mixed_poisson_log_pmf(n: u64, rho: f64, sigma2: f64) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rho must be finite and >= 0, got {rho}"
        )));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma2 must be finite and > 0, got {sigma2}"
        )));
    }
    let nf = n as f64;
    Ok(mixed_factor_term(sigma2, nf, rho) + xlogy(nf, rho.ln()) - ln_factorial(n))
}

/// Expected intensities `rho_{c,k}(t) = m_c(t) q_c(t) w_{c,k}(t)` and their
/// logarithms on the dataset grid, laid out `[cell][cause][year]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityGrid {
    cells: usize,
    causes: usize,
    years: usize,
    rho: Vec<f64>,
    ln_rho: Vec<f64>,
}

impl IntensityGrid {
    pub fn zeros(cells: usize, causes: usize, years: usize) -> Self {
        let n = cells * (causes + 1) * years;
        IntensityGrid {
            cells,
            causes,
            years,
            rho: vec![0.0; n],
            ln_rho: vec![f64::NEG_INFINITY; n],
        }
    }

    #[inline]
    fn idx(&self, cell: usize, cause: usize, y: usize) -> usize {
        (cell * (self.causes + 1) + cause) * self.years + y
    }

    pub fn rho(&self, cell: usize, cause: usize, y: usize) -> f64 {
        self.rho[self.idx(cell, cause, y)]
    }

    pub fn ln_rho(&self, cell: usize, cause: usize, y: usize) -> f64 {
        self.ln_rho[self.idx(cell, cause, y)]
    }

    /// Overwrites one intensity; `ln rho` is derived from it.
    pub fn set(&mut self, cell: usize, cause: usize, y: usize, rho: f64) {
        let i = self.idx(cell, cause, y);
        self.rho[i] = rho;
        self.ln_rho[i] = rho.ln();
    }

    /// `rho_k(t)`: intensity of `cause` summed over cells in fixed order.
    pub fn cause_total(&self, cause: usize, y: usize) -> f64 {
        (0..self.cells).map(|c| self.rho(c, cause, y)).sum()
    }
}

/// Intensities implied by `params` for the populations in `data`.
pub fn expected_intensities(data: &MortalityDataset, params: &ModelParams) -> Result<IntensityGrid> {
    check_shapes(data, params)?;
    let k1 = params.causes() + 1;
    let mut grid = IntensityGrid::zeros(data.cells(), params.causes(), data.years());
    let mut w = vec![0.0; k1];
    let mut ln_w = vec![0.0; k1];
    for cell in CellIndex::all(data.age_groups()) {
        let c = cell.linear();
        let dp = &params.death_prob[c];
        for y in 0..data.years() {
            let m = data.population(c, y);
            if m == 0 {
                continue;
            }
            let t = (y + 1) as f64;
            let x = dp.alpha + dp.beta * dp.trend.apply(t);
            let q = laplace_cdf_unchecked(x);
            let ln_q = laplace_log_cdf(x);
            cause_scores(params, c, t, &mut w);
            ln_w.copy_from_slice(&w);
            softmax_in_place(&mut w);
            log_softmax_in_place(&mut ln_w);
            let mf = m as f64;
            let ln_m = mf.ln();
            for k in 0..k1 {
                let i = grid.idx(c, k, y);
                grid.rho[i] = mf * q * w[k];
                grid.ln_rho[i] = ln_m + ln_q + ln_w[k];
            }
        }
    }
    Ok(grid)
}

#[inline]
pub(crate) fn cause_scores(params: &ModelParams, cell: usize, t: f64, out: &mut [f64]) {
    let wp = &params.weights;
    let (u, v) = (&wp.u[cell], &wp.v[cell]);
    for (k, s) in out.iter_mut().enumerate() {
        *s = u[k] + v[k] * wp.cause_trend[k].apply(t);
    }
}

fn check_shapes(data: &MortalityDataset, params: &ModelParams) -> Result<()> {
    params.validate()?;
    if params.age_groups() != data.age_groups() || params.causes() != data.causes() {
        return Err(Error::Shape(format!(
            "parameters cover {} age groups / {} causes, data {} / {}",
            params.age_groups(),
            params.causes(),
            data.age_groups(),
            data.causes()
        )));
    }
    Ok(())
}

/// Log-likelihood contribution of year index `y` given intensities.
pub fn year_log_likelihood_with_intensities(
    data: &MortalityDataset,
    grid: &IntensityGrid,
    variances: &RiskFactorVariances,
    y: usize,
) -> f64 {
    let mut total = 0.0;
    for c in 0..data.cells() {
        total += poisson_log_pmf_ln(data.deaths(c, 0, y), grid.rho(c, 0, y), grid.ln_rho(c, 0, y));
    }
    for k in 1..=data.causes() {
        let n_k = data.cause_total(CauseId(k), y) as f64;
        let rho_k = grid.cause_total(k, y);
        total += mixed_factor_term(variances.sigma2[k - 1], n_k, rho_k);
        for c in 0..data.cells() {
            let n = data.deaths(c, k, y);
            total += xlogy(n as f64, grid.ln_rho(c, k, y)) - ln_factorial(n);
        }
    }
    total
}

/// Log-likelihood from precomputed intensities, summed over years in order.
pub fn log_likelihood_with_intensities(
    data: &MortalityDataset,
    grid: &IntensityGrid,
    variances: &RiskFactorVariances,
) -> Result<f64> {
    if grid.cells != data.cells() || grid.causes != data.causes() || grid.years != data.years() {
        return Err(Error::Shape("intensity grid does not match dataset".into()));
    }
    if variances.sigma2.len() != data.causes() {
        return Err(Error::Shape("one variance per risk factor is required".into()));
    }
    Ok((0..data.years())
        .map(|y| year_log_likelihood_with_intensities(data, grid, variances, y))
        .sum())
}

/// Natural log of the unconditional likelihood of `data` under `params`.
///
/// Returns `-inf` (not an error) when some positive count has zero
/// expected intensity.
pub fn log_likelihood(data: &MortalityDataset, params: &ModelParams) -> Result<f64> {
    let grid = expected_intensities(data, params)?;
    log_likelihood_with_intensities(data, &grid, &params.variances)
}

/// Contribution of the single year index `y`; summing over all years in
/// order reproduces [`log_likelihood`] exactly.
pub fn log_likelihood_year(data: &MortalityDataset, params: &ModelParams, y: usize) -> Result<f64> {
    if y >= data.years() {
        return Err(Error::InvalidParameter(format!("year index {y} out of range")));
    }
    let grid = expected_intensities(data, params)?;
    Ok(year_log_likelihood_with_intensities(data, &grid, &params.variances, y))
}

/// Year totals `n_k(t)` and `rho_k(t)` for causes `1..=K`, indexed
/// `[k - 1][y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauseAggregates {
    pub deaths: Vec<Vec<u64>>,
    pub intensity: Vec<Vec<f64>>,
}

pub fn cause_aggregates(data: &MortalityDataset, params: &ModelParams) -> Result<CauseAggregates> {
    let grid = expected_intensities(data, params)?;
    let years = data.years();
    Ok(CauseAggregates {
        deaths: (1..=data.causes())
            .map(|k| (0..years).map(|y| data.cause_total(CauseId(k), y)).collect())
            .collect(),
        intensity: (1..=data.causes())
            .map(|k| (0..years).map(|y| grid.cause_total(k, y)).collect())
            .collect(),
    })
}

/// Posterior of one risk-factor realisation given its year totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskFactorPosterior {
    /// Gamma shape `1/sigma2 + n_k`.
    pub shape: f64,
    /// Gamma rate `1/sigma2 + rho_k`.
    pub rate: f64,
    pub mean: f64,
    /// MAP estimate.
    pub mode: f64,
}

/// Closed-form gamma posterior of `Lambda_k(t)` given `n_k(t)` and `rho_k(t)`.
pub fn map_risk_factor(n_k: u64, rho_k: f64, sigma2_k: f64) -> RiskFactorPosterior {
    let r = 1.0 / sigma2_k;
    let shape = r + n_k as f64;
    let rate = r + rho_k;
    RiskFactorPosterior {
        shape,
        rate,
        mean: shape / rate,
        mode: ((shape - 1.0) / rate).max(0.0),
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::model::TrendConstants;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Negative binomial pmf by the ratio recursion `p(n)/p(n-1)`.
    fn nb_pmf_recursive(n_max: usize, r: f64, p_fail: f64) -> Vec<f64> {
        let mut out = vec![(1.0 - p_fail).powf(r)];
        for n in 1..=n_max {
            let prev = out[n - 1];
            out.push(prev * (n as f64 - 1.0 + r) / n as f64 * p_fail);
        }
        out
    }

    #[test]
    fn mixed_pmf_at_zero() {
        let v = mixed_poisson_log_pmf(0, 2.0, 0.5).unwrap();
        assert!(close(v, -2.0 * 2f64.ln(), 1e-15));
        assert!(close(v, -1.386294, 1e-6));
    }

    #[test]
    fn mixed_pmf_normalizes() {
        let total: f64 = (0..=10_000)
            .map(|n| mixed_poisson_log_pmf(n, 3.0, 0.3).unwrap().exp())
            .sum();
        assert!(close(total, 1.0, 1e-10));
    }

    #[test]
    fn mixed_pmf_matches_negative_binomial() {
        let oracle = nb_pmf_recursive(50, 5.0, 0.5);
        for (n, want) in oracle.iter().enumerate() {
            let got = mixed_poisson_log_pmf(n as u64, 5.0, 0.2).unwrap().exp();
            assert!(close(got, *want, 1e-12), "n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn mixed_pmf_degenerate_intensity() {
        assert_eq!(mixed_poisson_log_pmf(0, 0.0, 0.4).unwrap(), 0.0);
        assert_eq!(mixed_poisson_log_pmf(3, 0.0, 0.4).unwrap(), f64::NEG_INFINITY);
        assert!(mixed_poisson_log_pmf(3, -1.0, 0.4).is_err());
        assert!(mixed_poisson_log_pmf(3, 1.0, 0.0).is_err());
    }

    #[test]
    fn mixed_pmf_tends_to_poisson() {
        for &(n, rho) in &[(0u64, 3.0), (7, 3.0), (120, 100.0), (3, 1e4)] {
            let poisson = n as f64 * f64::ln(rho) - rho - ln_factorial(n);
            let mixed = mixed_poisson_log_pmf(n, rho, 1e-16).unwrap();
            assert!(close(mixed, poisson, 1e-7), "n={n} rho={rho}: {mixed} vs {poisson}");
        }
    }

    #[test]
    fn stirling_branch_is_continuous() {
        for &(n, rho) in &[(1.0, 0.5), (40.0, 30.0), (5000.0, 4800.0)] {
            let below = ln_gamma(49.999 + n) - ln_gamma(49.999) - n * (49.999f64 + rho).ln();
            let above = ln_gamma_ratio_shifted(50.0, n, rho);
            let exact_above = ln_gamma(50.0 + n) - ln_gamma(50.0) - n * (50.0f64 + rho).ln();
            assert!(
                close(above, exact_above, 1e-10 * exact_above.abs().max(1.0)),
                "{above} {exact_above}"
            );
            assert!((above - below).abs() < 1e-1);
        }
    }

    #[test]
    fn map_examples() {
        let p = map_risk_factor(0, 0.0, 0.7);
        assert!(close(p.mean, 1.0, 1e-15));
        let p = map_risk_factor(10, 10.0, 0.5);
        assert!(close(p.mean, 1.0, 1e-15));
        let p = map_risk_factor(20, 10.0, 0.25);
        assert!(close(p.mode, 23.0 / 14.0, 1e-15));
    }

    #[test]
    fn map_mode_maximizes_log_posterior() {
        // golden-section search on the unnormalized gamma log density
        let (shape, rate) = (4.0 + 20.0, 4.0 + 10.0);
        let f = |x: f64| (shape - 1.0) * x.ln() - rate * x;
        let (mut a, mut b) = (1e-6, 10.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let numeric = 0.5 * (a + b);
        assert!(close(map_risk_factor(20, 10.0, 0.25).mode, numeric, 1e-7));
        assert!(close(numeric, 1.642857, 1e-6));
    }

    fn toy_data() -> (MortalityDataset, ModelParams) {
        let mut d = MortalityDataset::zeros(1, 2, 2000, 3);
        let counts = [[[5u64, 3, 9], [2, 0, 4], [7, 1, 0]], [[1, 1, 2], [0, 0, 1], [3, 2, 5]]];
        for c in 0..2 {
            for y in 0..3 {
                d.set_population(c, y, 100 + 10 * y as u64);
                for k in 0..3 {
                    d.set_deaths(c, k, y, counts[c][k][y]);
                }
            }
        }
        let mut p = ModelParams::flat(1, 2, TrendConstants::default(), 0.3);
        p.death_prob[0].alpha = -2.0;
        p.death_prob[1].alpha = -2.5;
        p.death_prob[1].beta = 0.05;
        p.weights.u[0] = vec![0.0, -0.4, 0.2];
        p.weights.v[1] = vec![0.0, 0.1, -0.1];
        p.variances.sigma2 = vec![0.2, 0.7];
        (d, p)
    }

    #[test]
    fn zero_deaths_closed_form() {
        let (mut d, p) = toy_data();
        for c in 0..2 {
            for k in 0..3 {
                for y in 0..3 {
                    d.set_deaths(c, k, y, 0);
                }
            }
        }
        let grid = expected_intensities(&d, &p).unwrap();
        let mut want = 0.0;
        for y in 0..3 {
            for c in 0..2 {
                want -= grid.rho(c, 0, y);
            }
            for k in 1..=2 {
                let s2 = p.variances.sigma2[k - 1];
                want -= (1.0 / s2) * (1.0 + s2 * grid.cause_total(k, y)).ln();
            }
        }
        let got = log_likelihood(&d, &p).unwrap();
        assert!(close(got, want, 1e-12), "{got} vs {want}");
    }

    #[test]
    fn tiny_variance_is_poisson() {
        let (d, mut p) = toy_data();
        p.variances.sigma2 = vec![1e-10; 2];
        let grid = expected_intensities(&d, &p).unwrap();
        let mut poisson = 0.0;
        for c in 0..2 {
            for k in 0..3 {
                for y in 0..3 {
                    let n = d.deaths(c, k, y) as f64;
                    let rho = grid.rho(c, k, y);
                    poisson += n * rho.ln() - rho - ln_gamma(n + 1.0);
                }
            }
        }
        assert!(close(log_likelihood(&d, &p).unwrap(), poisson, 1e-4));
    }

    #[test]
    fn year_terms_sum_to_total() {
        let (d, p) = toy_data();
        let total = log_likelihood(&d, &p).unwrap();
        let mut sum = 0.0;
        for y in 0..d.years() {
            sum += log_likelihood_year(&d, &p, y).unwrap();
        }
        assert_eq!(sum, total);
    }

    #[test]
    fn zero_intensity_with_deaths_is_negative_infinity() {
        let (d, p) = toy_data();
        let mut grid = expected_intensities(&d, &p).unwrap();
        grid.set(1, 2, 2, 0.0);
        let ll = log_likelihood_with_intensities(&d, &grid, &p.variances).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
        grid.set(1, 0, 0, 0.0);
        let ll = log_likelihood_with_intensities(&d, &grid, &p.variances).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn gauge_shift_leaves_likelihood_unchanged() {
        let (d, p) = toy_data();
        let base = log_likelihood(&d, &p).unwrap();
        let mut shifted = p.clone();
        shifted.weights.u[1].iter_mut().for_each(|u| *u += 3.7);
        shifted.weights.v[1].iter_mut().for_each(|v| *v -= 0.25);
        assert!(close(log_likelihood(&d, &shifted).unwrap(), base, 1e-9));
    }

    #[test]
    fn aggregates_match_dataset() {
        let (d, p) = toy_data();
        let agg = cause_aggregates(&d, &p).unwrap();
        assert_eq!(agg.deaths[0][0], d.deaths(0, 1, 0) + d.deaths(1, 1, 0));
        assert!(agg.intensity.iter().flatten().all(|&r| r > 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (d, _) = toy_data();
        let p = ModelParams::flat(2, 2, TrendConstants::default(), 0.3);
        assert!(matches!(log_likelihood(&d, &p), Err(Error::Shape(_))));
    }
}
