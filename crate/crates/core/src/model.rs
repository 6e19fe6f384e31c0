//! The parametric mortality model.
//!
//! Every person in an (age group, gender) cell shares a one-year death
//! probability `q(t)` and a vector of cause weights `w_k(t)` on the simplex
//! over causes `0..=K`. Cause 0 is idiosyncratic ("not elsewhere defined");
//! causes `1..=K` are driven by mean-one gamma risk factors with variances
//! `sigma2_k`.
//!
//! Time enters through the bounded arctangent trend reduction
//! `T(t) = atan(zeta + eta * t) / eta`, so both `q` and `w` converge to
//! non-degenerate limits as `t -> inf`:
//!
//! ```text
//! q(t)   = F_lap(alpha + beta * T_{zeta,eta}(t))
//! w_k(t) = softmax_k(u_k + v_k * T_{phi_k,psi_k}(t))
//! ```
//!
//! All functions here are pure.

use std::f64::consts::{FRAC_PI_2, LN_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_AGE_GROUPS: usize = 9;
pub const DEFAULT_CAUSES: usize = 10;
pub const DEFAULT_BASE_YEAR: i32 = 1987;
/// Inverse halving time of the initial trend used for both death
/// probabilities and cause weights unless configured otherwise.
pub const DEFAULT_TREND_ETA: f64 = 1.0 / 150.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn short(self) -> char {
        match self {
            Gender::Female => 'f',
            Gender::Male => 'm',
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" | "females" => Ok(Gender::Female),
            "m" | "male" | "males" => Ok(Gender::Male),
            other => Err(Error::Data(format!("unknown gender {other:?}"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

/// An (age group, gender) cell. Age groups are numbered from 1.
///
/// Cells have a canonical linear order: age-major, female before male.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub age_group: usize,
    pub gender: Gender,
}

impl CellIndex {
    pub fn new(age_group: usize, gender: Gender, age_groups: usize) -> Result<Self> {
        if age_group == 0 || age_group > age_groups {
            return Err(Error::InvalidParameter(format!(
                "age group {age_group} outside 1..={age_groups}"
            )));
        }
        Ok(CellIndex { age_group, gender })
    }

    pub fn linear(self) -> usize {
        (self.age_group - 1) * 2 + self.gender as usize
    }

    pub fn from_linear(index: usize) -> Self {
        CellIndex {
            age_group: index / 2 + 1,
            gender: Gender::ALL[index % 2],
        }
    }

    /// All `2 * age_groups` cells in canonical order.
    pub fn all(age_groups: usize) -> impl Iterator<Item = CellIndex> + Clone {
        (0..2 * age_groups).map(CellIndex::from_linear)
    }
}

/// Compact label such as `a9.m`, used in CSV files and column names.
impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}.{}", self.age_group, self.gender.short())
    }
}

impl FromStr for CellIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("cannot parse cell {s:?}; expected e.g. a9.m"));
        let rest = s.trim().strip_prefix('a').ok_or_else(bad)?;
        let (age, gender) = rest.split_once('.').ok_or_else(bad)?;
        let age_group: usize = age.parse().map_err(|_| bad())?;
        if age_group == 0 {
            return Err(bad());
        }
        Ok(CellIndex {
            age_group,
            gender: gender.parse()?,
        })
    }
}

/// Cause index `k` in `0..=K`; 0 is the idiosyncratic cause.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CauseId(pub usize);

impl CauseId {
    pub const IDIOSYNCRATIC: CauseId = CauseId(0);

    pub fn is_idiosyncratic(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for CauseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Shift `zeta` and inverse halving time `eta > 0` of the arctangent trend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrend")]
pub struct TrendReductionParams {
    pub zeta: f64,
    pub eta: f64,
}

#[derive(Deserialize)]
struct RawTrend {
    zeta: f64,
    eta: f64,
}

impl TryFrom<RawTrend> for TrendReductionParams {
    type Error = Error;

    fn try_from(raw: RawTrend) -> Result<Self> {
        TrendReductionParams::new(raw.zeta, raw.eta)
    }
}

impl TrendReductionParams {
    pub fn new(zeta: f64, eta: f64) -> Result<Self> {
        if !zeta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "trend shift must be finite, got {zeta}"
            )));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "trend eta must be finite and > 0, got {eta}"
            )));
        }
        Ok(TrendReductionParams { zeta, eta })
    }

    /// `atan(zeta + eta * t) / eta`.
    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        (self.zeta + self.eta * t).atan() / self.eta
    }

    /// The `t -> inf` limit, `pi / (2 eta)`.
    pub fn upper_limit(&self) -> f64 {
        FRAC_PI_2 / self.eta
    }
}

impl Default for TrendReductionParams {
    fn default() -> Self {
        TrendReductionParams {
            zeta: 0.0,
            eta: DEFAULT_TREND_ETA,
        }
    }
}

/// Fixed trend-reduction constants for death probabilities and cause weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrendConstants {
    pub death: TrendReductionParams,
    pub cause: TrendReductionParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeathProbParams {
    pub cell: CellIndex,
    pub alpha: f64,
    pub beta: f64,
    pub trend: TrendReductionParams,
}

/// Softmax scores per cell (outer index, canonical order) and cause (inner
/// index `0..=K`), plus the per-cause trend constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub cause_trend: Vec<TrendReductionParams>,
}

/// Variances of the mean-one gamma factors for causes `1..=K`; entry `i`
/// belongs to cause `i + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskFactorVariances {
    pub sigma2: Vec<f64>,
}

impl RiskFactorVariances {
    /// Variance of the factor driving `cause`; panics for the idiosyncratic cause.
    pub fn of(&self, cause: CauseId) -> f64 {
        assert!(!cause.is_idiosyncratic(), "cause 0 has no risk factor");
        self.sigma2[cause.0 - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub death_prob: Vec<DeathProbParams>,
    pub weights: WeightParams,
    pub variances: RiskFactorVariances,
}

impl ModelParams {
    /// Parameters with `alpha = beta = u = v = 0` and a common factor variance.
    pub fn flat(age_groups: usize, causes: usize, trends: TrendConstants, sigma2: f64) -> Self {
        let cells = 2 * age_groups;
        ModelParams {
            death_prob: CellIndex::all(age_groups)
                .map(|cell| DeathProbParams {
                    cell,
                    alpha: 0.0,
                    beta: 0.0,
                    trend: trends.death,
                })
                .collect(),
            weights: WeightParams {
                u: vec![vec![0.0; causes + 1]; cells],
                v: vec![vec![0.0; causes + 1]; cells],
                cause_trend: vec![trends.cause; causes + 1],
            },
            variances: RiskFactorVariances {
                sigma2: vec![sigma2; causes],
            },
        }
    }

    pub fn age_groups(&self) -> usize {
        self.death_prob.len() / 2
    }

    pub fn cells(&self) -> usize {
        self.death_prob.len()
    }

    /// Number of non-idiosyncratic causes `K`.
    pub fn causes(&self) -> usize {
        self.variances.sigma2.len()
    }

    /// Number of raw parameters: alpha, beta per cell, u, v per cell and
    /// cause, and one variance per risk factor.
    pub fn raw_dimension(&self) -> usize {
        let c = self.cells();
        let k = self.causes();
        2 * c + 2 * c * (k + 1) + k
    }

    /// Raw dimension minus the `2 * cells` gauge coordinates `u[.,0]`, `v[.,0]`.
    pub fn free_dimension(&self) -> usize {
        self.raw_dimension() - 2 * self.cells()
    }

    /// Checks structural consistency and parameter domains. The softmax
    /// gauge is not required here; see [`ModelParams::is_gauge_fixed`].
    pub fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if cells == 0 || !cells.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "expected a positive even number of cells, got {cells}"
            )));
        }
        let k = self.causes();
        if k == 0 {
            return Err(Error::Shape("at least one risk factor is required".into()));
        }
        for (i, dp) in self.death_prob.iter().enumerate() {
            if dp.cell.linear() != i {
                return Err(Error::Shape(format!(
                    "death_prob entry {i} is for cell {} (expected {})",
                    dp.cell,
                    CellIndex::from_linear(i)
                )));
            }
            if !dp.alpha.is_finite() || !dp.beta.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite alpha/beta for cell {}",
                    dp.cell
                )));
            }
            TrendReductionParams::new(dp.trend.zeta, dp.trend.eta)?;
        }
        let w = &self.weights;
        for (name, rows) in [("u", &w.u), ("v", &w.v)] {
            if rows.len() != cells {
                return Err(Error::Shape(format!(
                    "{name} has {} rows, expected {cells}",
                    rows.len()
                )));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != k + 1 {
                    return Err(Error::Shape(format!(
                        "{name}[{i}] has {} entries, expected {}",
                        row.len(),
                        k + 1
                    )));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidParameter(format!("non-finite {name}[{i}]")));
                }
            }
        }
        if w.cause_trend.len() != k + 1 {
            return Err(Error::Shape(format!(
                "cause_trend has {} entries, expected {}",
                w.cause_trend.len(),
                k + 1
            )));
        }
        for tr in &w.cause_trend {
            TrendReductionParams::new(tr.zeta, tr.eta)?;
        }
        for (i, &s) in self.variances.sigma2.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "sigma2 for cause {} must be finite and > 0, got {s}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// True when `u[cell][0] == v[cell][0] == 0` for every cell.
    pub fn is_gauge_fixed(&self) -> bool {
        self.weights
            .u
            .iter()
            .zip(&self.weights.v)
            .all(|(u, v)| u[0] == 0.0 && v[0] == 0.0)
    }

    /// Moves every cell to the reference gauge by subtracting the cause-0
    /// scores. Cause weights are unchanged up to rounding.
    pub fn fix_gauge(&mut self) {
        for row in self.weights.u.iter_mut().chain(self.weights.v.iter_mut()) {
            let r = row[0];
            row.iter_mut().for_each(|x| *x -= r);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ModelParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Maps calendar years to model time; `base_year` is `t = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeMapping {
    pub base_year: i32,
    /// Number of observed years `T`.
    pub years: usize,
}

impl TimeMapping {
    pub fn new(base_year: i32, years: usize) -> Result<Self> {
        if years < 2 {
            return Err(Error::Coverage(format!(
                "at least two observed years are required, got {years}"
            )));
        }
        Ok(TimeMapping { base_year, years })
    }

    pub fn t_of_year(&self, year: i32) -> f64 {
        f64::from(year - self.base_year + 1)
    }

    pub fn year_of_t(&self, t: usize) -> i32 {
        self.base_year + t as i32 - 1
    }

    pub fn last_year(&self) -> i32 {
        self.year_of_t(self.years)
    }
}

impl Default for TimeMapping {
    fn default() -> Self {
        TimeMapping {
            base_year: DEFAULT_BASE_YEAR,
            years: 25,
        }
    }
}

/// CDF of the standard Laplace distribution.
///
/// Evaluated piecewise: `exp(x)/2` below zero and `1 - exp(-x)/2` above, so
/// neither branch cancels.
pub fn laplace_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "laplace_cdf needs a finite argument, got {x}"
        )));
    }
    Ok(laplace_cdf_unchecked(x))
}

#[inline]
pub(crate) fn laplace_cdf_unchecked(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * x.exp()
    } else if x > 0.0 {
        1.0 - 0.5 * (-x).exp()
    } else {
        0.5
    }
}

/// `ln F_lap(x)`, exact on the negative branch where it is `x - ln 2`.
#[inline]
pub fn laplace_log_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        x - LN_2
    } else {
        (-0.5 * (-x).exp()).ln_1p()
    }
}

/// Inverse of [`laplace_cdf`] on `(0, 1)`.
pub fn laplace_quantile(p: f64) -> f64 {
    if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    }
}

pub fn trend_reduction(params: &TrendReductionParams, t: f64) -> f64 {
    params.apply(t)
}

/// One-year death probability of `cell` at model time `t`.
///
/// # Panics
///
/// If `cell` is outside the grid of `params`.
pub fn death_probability(cell: CellIndex, t: f64, params: &ModelParams) -> f64 {
    let dp = &params.death_prob[cell.linear()];
    laplace_cdf_unchecked(dp.alpha + dp.beta * dp.trend.apply(t))
}

/// Natural log of [`death_probability`].
pub fn log_death_probability(cell: CellIndex, t: f64, params: &ModelParams) -> f64 {
    let dp = &params.death_prob[cell.linear()];
    laplace_log_cdf(dp.alpha + dp.beta * dp.trend.apply(t))
}

/// Cause weights `w_0..=w_K` of `cell` at time `t`.
pub fn cause_weights(cell: CellIndex, t: f64, params: &ModelParams) -> Vec<f64> {
    let mut out = vec![0.0; params.causes() + 1];
    cause_weights_into(cell, t, params, &mut out);
    out
}

pub fn cause_weights_into(cell: CellIndex, t: f64, params: &ModelParams, out: &mut [f64]) {
    cause_scores_into(cell, t, params, out);
    softmax_in_place(out);
}

/// `ln w_k` for every cause, via a log-sum-exp with max subtraction.
pub fn log_cause_weights_into(cell: CellIndex, t: f64, params: &ModelParams, out: &mut [f64]) {
    cause_scores_into(cell, t, params, out);
    log_softmax_in_place(out);
}

fn cause_scores_into(cell: CellIndex, t: f64, params: &ModelParams, out: &mut [f64]) {
    let w = &params.weights;
    let u = &w.u[cell.linear()];
    let v = &w.v[cell.linear()];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = u[k] + v[k] * w.cause_trend[k].apply(t);
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
    let lse = sum.ln();
    for v in x.iter_mut() {
        *v = (*v - max) - lse;
    }
}

/// Expected deaths `m * q * w_k` from `cause` in `cell` at time `t`.
pub fn expected_deaths(cell: CellIndex, cause: CauseId, t: f64, params: &ModelParams, population: u64) -> f64 {
    if population == 0 {
        return 0.0;
    }
    let q = death_probability(cell, t, params);
    let w = cause_weights(cell, t, params);
    population as f64 * q * w[cause.0]
}
