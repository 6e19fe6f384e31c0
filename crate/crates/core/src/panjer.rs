//! Exact one-period loss distribution of an annuity portfolio.
//!
//! Conditional on the risk factors, every policy dies with a Poisson number
//! of deaths whose intensity is `q_i * sum_k w_{i,k} Lambda_k`. Grouping
//! policies by cause gives one sector per cause: sector 0 is compound
//! Poisson, sectors `k >= 1` are compound negative binomial once the gamma
//! factor is integrated out. Each sector's distribution comes from the
//! Panjer recursion and the sectors are convolved in cause order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cause_weights_into, death_probability, CauseId, CellIndex, ModelParams};

/// Tail mass beyond the truncation point that triggers a warning.
pub const TAIL_WARNING: f64 = 1e-6;

const RESCALE_ABOVE: f64 = 1e250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub cell: CellIndex,
    /// Annuity amount in loss units.
    pub exposure: u64,
    /// Number of identical policies.
    pub count: u64,
}

impl Policy {
    /// Policy with `amount` rounded up to whole loss units.
    pub fn from_amount(cell: CellIndex, amount: f64, loss_unit: f64, count: u64) -> Result<Self> {
        if !(amount > 0.0) || !(loss_unit > 0.0) || !amount.is_finite() || !loss_unit.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "amount {amount} and loss unit {loss_unit} must be positive"
            )));
        }
        Ok(Policy {
            cell,
            exposure: (amount / loss_unit).ceil() as u64,
            count,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub policies: Vec<Policy>,
    /// Monetary value of one loss unit.
    pub loss_unit: f64,
    pub valuation_year: i32,
}

impl Portfolio {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::InvalidParameter("portfolio has no policies".into()));
        }
        if !(self.loss_unit > 0.0) {
            return Err(Error::InvalidParameter("loss unit must be positive".into()));
        }
        for p in &self.policies {
            if p.exposure == 0 || p.count == 0 {
                return Err(Error::InvalidParameter(format!(
                    "policy in {} needs exposure >= 1 and count >= 1",
                    p.cell
                )));
            }
            if p.cell.age_group == 0 || p.cell.age_group > params.age_groups() {
                return Err(Error::Shape(format!(
                    "policy cell {} is outside the model grid",
                    p.cell
                )));
            }
        }
        Ok(())
    }

    /// Sum of exposure times count.
    pub fn total_exposure(&self) -> u64 {
        self.policies.iter().map(|p| p.exposure * p.count).sum()
    }

    pub fn max_exposure(&self) -> u64 {
        self.policies.iter().map(|p| p.exposure).max().unwrap_or(0)
    }

    /// Reads `cell,exposure_units,count` rows.
    pub fn read_csv<R: Read>(reader: R, loss_unit: f64, valuation_year: i32) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != ["cell", "exposure_units", "count"] {
            return Err(Error::Data(format!(
                "portfolio columns must be cell,exposure_units,count; found {}",
                header.join(",")
            )));
        }
        let mut policies = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Data(format!("portfolio row {}: bad {what}", line + 2));
            let cell: CellIndex = rec.get(0).unwrap_or("").trim().parse()?;
            let exposure = rec
                .get(1)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad("exposure_units"))?;
            let count = rec.get(2).unwrap_or("").trim().parse().map_err(|_| bad("count"))?;
            policies.push(Policy { cell, exposure, count });
        }
        Ok(Portfolio {
            policies,
            loss_unit,
            valuation_year,
        })
    }

    pub fn load(path: &Path, loss_unit: f64, valuation_year: i32) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(f), loss_unit, valuation_year)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell", "exposure_units", "count"])?;
        for p in &self.policies {
            w.write_record([p.cell.to_string(), p.exposure.to_string(), p.count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Distribution of the loss on `0..=n_max` units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPmf {
    pub probabilities: Vec<f64>,
    /// Probability beyond `n_max`.
    pub tail_mass: f64,
    pub warnings: Vec<String>,
}

impl LossPmf {
    pub fn point_mass(at: usize) -> Self {
        let mut probabilities = vec![0.0; at + 1];
        probabilities[at] = 1.0;
        LossPmf {
            probabilities,
            tail_mass: 0.0,
            warnings: Vec::new(),
        }
    }

    fn from_probabilities(probabilities: Vec<f64>, context: &str) -> Self {
        let total: f64 = probabilities.iter().sum();
        let tail_mass = (1.0 - total).max(0.0);
        let mut warnings = Vec::new();
        if tail_mass > TAIL_WARNING {
            warnings.push(format!(
                "{context}: {tail_mass:.3e} probability lies beyond {} loss units",
                probabilities.len().saturating_sub(1)
            ));
        }
        LossPmf {
            probabilities,
            tail_mass,
            warnings,
        }
    }

    pub fn n_max(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probabilities.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - m).powi(2) * p)
            .sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.probabilities
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["loss_units", "probability"])?;
        for (n, p) in self.probabilities.iter().enumerate() {
            w.write_record([n.to_string(), format!("{p:?}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))
    }
}

/// Claim-count distribution of one sector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Counting {
    Poisson {
        lambda: f64,
    },
    /// `r` successes, failure probability `p`.
    NegativeBinomial {
        r: f64,
        p: f64,
    },
}

impl Counting {
    /// Gamma-mixed Poisson with mean `lambda` and mixing variance `sigma2`.
    pub fn mixed(lambda: f64, sigma2: f64) -> Self {
        let s = sigma2 * lambda;
        Counting::NegativeBinomial {
            r: 1.0 / sigma2,
            p: s / (1.0 + s),
        }
    }

    /// `(a, b, ln P(N = 0))` of the `(a, b, 0)` class.
    fn abc(self) -> Result<(f64, f64, f64)> {
        match self {
            Counting::Poisson { lambda } if lambda >= 0.0 && lambda.is_finite() => Ok((0.0, lambda, -lambda)),
            Counting::NegativeBinomial { r, p } if r > 0.0 && r.is_finite() && (0.0..1.0).contains(&p) => {
                Ok((p, (r - 1.0) * p, r * (-p).ln_1p()))
            }
            other => Err(Error::InvalidParameter(format!(
                "invalid counting distribution {other:?}"
            ))),
        }
    }
}

/// Compound distribution of `sum_{i <= N} X_i` with `X ~ severity` on
/// `1, 2, ...` (entry 0 must be zero), truncated at `n_max`.
///
/// The recursion runs on a rescaled sequence so that a vanishing `P(N = 0)`
/// does not underflow the whole result.
pub fn compound_panjer(counting: Counting, severity: &[f64], n_max: usize) -> Result<LossPmf> {
    if severity.first().copied().unwrap_or(0.0) != 0.0 {
        return Err(Error::InvalidParameter("severity must put no mass on zero".into()));
    }
    if severity.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidParameter(
            "severity probabilities must be non-negative".into(),
        ));
    }
    let (a, b, ln_f0) = counting.abc()?;
    let support: Vec<(usize, f64)> = severity
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, s)| **s > 0.0)
        .map(|(j, s)| (j, *s))
        .collect();
    let mut g = vec![0.0; n_max + 1];
    g[0] = 1.0;
    let mut ln_scale = ln_f0;
    for n in 1..=n_max {
        let nf = n as f64;
        let mut acc = 0.0;
        for &(j, s) in &support {
            if j > n {
                break;
            }
            acc += (a + b * j as f64 / nf) * s * g[n - j];
        }
        g[n] = acc;
        if acc > RESCALE_ABOVE {
            for v in g[..=n].iter_mut() {
                *v /= RESCALE_ABOVE;
            }
            ln_scale += RESCALE_ABOVE.ln();
        }
    }
    let probabilities = g
        .into_iter()
        .map(|v| if v > 0.0 { (v.ln() + ln_scale).exp() } else { 0.0 })
        .collect();
    Ok(LossPmf::from_probabilities(probabilities, "compound recursion"))
}

/// Truncated convolution of two loss distributions.
pub fn convolve(x: &LossPmf, y: &LossPmf, n_max: usize) -> LossPmf {
    let trim = |p: &[f64]| p.iter().rposition(|v| *v > 0.0).map_or(0, |i| i + 1);
    let (lx, ly) = (trim(&x.probabilities), trim(&y.probabilities));
    let mut out = vec![0.0; n_max + 1];
    for (i, &px) in x.probabilities[..lx].iter().enumerate() {
        if px == 0.0 || i > n_max {
            continue;
        }
        let top = ly.min(n_max + 1 - i);
        for (j, &py) in y.probabilities[..top].iter().enumerate() {
            out[i + j] += px * py;
        }
    }
    let mut pmf = LossPmf::from_probabilities(out, "convolution");
    let mut warnings = x.warnings.clone();
    warnings.extend(y.warnings.iter().cloned());
    warnings.append(&mut pmf.warnings);
    pmf.warnings = warnings;
    pmf
}

/// Expected number of deaths `lambda_k` of one sector and the distribution
/// of the exposure of a death in it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub cause: CauseId,
    pub lambda: f64,
    /// Indexed by exposure units; empty when `lambda == 0`.
    pub severity: Vec<f64>,
}

impl Sector {
    pub fn is_empty(&self) -> bool {
        self.lambda == 0.0
    }
}

pub fn sector_severity(portfolio: &Portfolio, params: &ModelParams, k: CauseId, t: f64) -> Result<Sector> {
    portfolio.validate(params)?;
    if k.0 > params.causes() {
        return Err(Error::InvalidParameter(format!("cause {k} is outside the model")));
    }
    let mut by_exposure = vec![0.0; portfolio.max_exposure() as usize + 1];
    let mut w = vec![0.0; params.causes() + 1];
    for p in &portfolio.policies {
        let q = death_probability(p.cell, t, params);
        cause_weights_into(p.cell, t, params, &mut w);
        by_exposure[p.exposure as usize] += p.count as f64 * q * w[k.0];
    }
    let lambda: f64 = by_exposure.iter().sum();
    let severity = if lambda > 0.0 {
        by_exposure.iter().map(|v| v / lambda).collect()
    } else {
        Vec::new()
    };
    Ok(Sector {
        cause: k,
        lambda,
        severity,
    })
}

/// Loss distribution of each non-empty sector, in cause order.
pub fn sector_pmfs(portfolio: &Portfolio, params: &ModelParams, t: f64, n_max: usize) -> Result<Vec<LossPmf>> {
    params.validate()?;
    let sectors = (0..=params.causes())
        .map(|k| sector_severity(portfolio, params, CauseId(k), t))
        .collect::<Result<Vec<_>>>()?;
    sectors
        .par_iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let counting = if s.cause.is_idiosyncratic() {
                Counting::Poisson { lambda: s.lambda }
            } else {
                Counting::mixed(s.lambda, params.variances.of(s.cause))
            };
            let mut pmf = compound_panjer(counting, &s.severity, n_max)?;
            for w in pmf.warnings.iter_mut() {
                *w = format!("cause {}: {w}", s.cause);
            }
            Ok(pmf)
        })
        .collect()
}

/// Portfolio loss distribution at model time `t` on `0..=n_max` units.
pub fn portfolio_loss(portfolio: &Portfolio, params: &ModelParams, t: f64, n_max: usize) -> Result<LossPmf> {
    let sectors = sector_pmfs(portfolio, params, t, n_max)?;
    Ok(sectors
        .iter()
        .fold(LossPmf::point_mass(0), |acc, s| convolve(&acc, s, n_max)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskMeasures {
    pub alpha: f64,
    /// Loss units.
    pub value_at_risk: usize,
    /// Loss units.
    pub expected_shortfall: f64,
}

/// Value-at-risk `min{n : F(n) >= alpha}` and expected shortfall
/// `(E[L 1{L > VaR}] + VaR (F(VaR) - alpha)) / (1 - alpha)`.
///
/// Fails with [`Error::Truncation`] when more than [`TAIL_WARNING`] of the
/// mass lies beyond the truncation point.
pub fn risk_measures(pmf: &LossPmf, alpha: f64) -> Result<RiskMeasures> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "level must lie in (0, 1), got {alpha}"
        )));
    }
    let cdf = pmf.cdf();
    let var = cdf.iter().position(|&c| c >= alpha).ok_or_else(|| {
        Error::Truncation(format!(
            "distribution truncated at {} units reaches only {:.12} < {alpha}",
            pmf.n_max(),
            cdf.last().copied().unwrap_or(0.0)
        ))
    })?;
    if pmf.tail_mass > TAIL_WARNING {
        return Err(Error::Truncation(format!(
            "tail mass {:.3e} beyond {} units is too large for expected shortfall at {alpha}",
            pmf.tail_mass,
            pmf.n_max()
        )));
    }
    let beyond: f64 = pmf.probabilities[var + 1..]
        .iter()
        .enumerate()
        .map(|(i, p)| (var + 1 + i) as f64 * p)
        .sum();
    let es = (beyond + var as f64 * (cdf[var] - alpha)) / (1.0 - alpha);
    Ok(RiskMeasures {
        alpha,
        value_at_risk: var,
        expected_shortfall: es.max(var as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::mixed_poisson_log_pmf;
    use crate::model::{Gender, TrendConstants};
    use statrs::function::gamma::ln_gamma;

    fn poisson_pmf(n: usize, lambda: f64) -> f64 {
        (n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0)).exp()
    }

    #[test]
    fn poisson_point_mass() {
        let pmf = compound_panjer(Counting::Poisson { lambda: 0.01 }, &[0.0, 1.0], 10).unwrap();
        for n in 0..=10 {
            assert!((pmf.probabilities[n] - poisson_pmf(n, 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_binomial_point_mass_matches_mixed_pmf() {
        let (lambda, s2) = (4.0, 0.3);
        let pmf = compound_panjer(Counting::mixed(lambda, s2), &[0.0, 1.0], 60).unwrap();
        for n in 0..=60 {
            let want = mixed_poisson_log_pmf(n as u64, lambda, s2).unwrap().exp();
            assert!((pmf.probabilities[n] - want).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn large_intensity_survives_underflow() {
        let lambda = 2000.0;
        let pmf = compound_panjer(Counting::Poisson { lambda }, &[0.0, 1.0], 4000).unwrap();
        assert!((pmf.total() - 1.0).abs() < 1e-9);
        assert!((pmf.mean() - lambda).abs() < 1e-6 * lambda);
        assert!(pmf.warnings.is_empty());
    }

    #[test]
    fn truncation_is_reported() {
        let pmf = compound_panjer(Counting::Poisson { lambda: 10.0 }, &[0.0, 1.0], 5).unwrap();
        assert!(pmf.tail_mass > 0.9);
        assert_eq!(pmf.warnings.len(), 1);
        assert!(matches!(risk_measures(&pmf, 0.99), Err(Error::Truncation(_))));
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(compound_panjer(Counting::Poisson { lambda: 1.0 }, &[0.5, 0.5], 5).is_err());
        assert!(compound_panjer(Counting::Poisson { lambda: -1.0 }, &[0.0, 1.0], 5).is_err());
        assert!(compound_panjer(Counting::NegativeBinomial { r: 1.0, p: 1.0 }, &[0.0, 1.0], 5).is_err());
    }

    #[test]
    fn risk_measure_examples() {
        let pm = LossPmf::point_mass(5);
        for &a in &[0.01, 0.5, 0.99] {
            let r = risk_measures(&pm, a).unwrap();
            assert_eq!(r.value_at_risk, 5);
            assert!((r.expected_shortfall - 5.0).abs() < 1e-12);
        }
        let uniform = LossPmf::from_probabilities(vec![0.1; 10], "uniform");
        assert_eq!(risk_measures(&uniform, 0.95).unwrap().value_at_risk, 9);
        assert!(risk_measures(&uniform, 1.0).is_err());
        assert!(risk_measures(&uniform, 0.0).is_err());
    }

    #[test]
    fn poisson_risk_measures_by_direct_summation() {
        let pmf = compound_panjer(Counting::Poisson { lambda: 3.0 }, &[0.0, 1.0], 200).unwrap();
        let alpha = 0.99;
        let mut cum = 0.0;
        let mut var = 0;
        for n in 0..=200 {
            cum += poisson_pmf(n, 3.0);
            if cum >= alpha {
                var = n;
                break;
            }
        }
        assert_eq!(var, 8);
        // tail expectation over the worst 1% of outcomes, split at the atom
        let mut remaining = 1.0 - alpha;
        let mut acc = 0.0;
        for n in (0..=200).rev() {
            let take = poisson_pmf(n, 3.0).min(remaining);
            acc += take * n as f64;
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
        let es = acc / (1.0 - alpha);
        let r = risk_measures(&pmf, alpha).unwrap();
        assert_eq!(r.value_at_risk, var);
        assert!(
            (r.expected_shortfall - es).abs() < 1e-9,
            "{} vs {es}",
            r.expected_shortfall
        );
    }

    fn cell(a: usize, g: Gender) -> CellIndex {
        CellIndex {
            age_group: a,
            gender: g,
        }
    }

    #[test]
    fn severity_examples() {
        let p = ModelParams::flat(2, 1, TrendConstants::default(), 0.2);
        let unit = Portfolio {
            policies: vec![
                Policy {
                    cell: cell(1, Gender::Female),
                    exposure: 1,
                    count: 3,
                },
                Policy {
                    cell: cell(2, Gender::Male),
                    exposure: 1,
                    count: 1,
                },
            ],
            loss_unit: 1.0,
            valuation_year: 2011,
        };
        let s = sector_severity(&unit, &p, CauseId(1), 5.0).unwrap();
        assert_eq!(s.severity, vec![0.0, 1.0]);
        let two = Portfolio {
            policies: vec![
                Policy {
                    cell: cell(1, Gender::Female),
                    exposure: 1,
                    count: 1,
                },
                Policy {
                    cell: cell(1, Gender::Female),
                    exposure: 2,
                    count: 1,
                },
            ],
            ..unit
        };
        let s = sector_severity(&two, &p, CauseId(0), 5.0).unwrap();
        assert_eq!(s.severity, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn from_amount_rounds_up() {
        let c = cell(1, Gender::Male);
        assert_eq!(Policy::from_amount(c, 1000.0, 1000.0, 1).unwrap().exposure, 1);
        assert_eq!(Policy::from_amount(c, 1000.5, 1000.0, 1).unwrap().exposure, 2);
        assert!(Policy::from_amount(c, 0.0, 1000.0, 1).is_err());
    }

    #[test]
    fn portfolio_csv_round_trip() {
        let pf = Portfolio {
            policies: vec![
                Policy {
                    cell: cell(3, Gender::Male),
                    exposure: 7,
                    count: 2,
                },
                Policy {
                    cell: cell(1, Gender::Female),
                    exposure: 1,
                    count: 10,
                },
            ],
            loss_unit: 500.0,
            valuation_year: 2012,
        };
        let mut buf = Vec::new();
        pf.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("cell,exposure_units,count\na3.m,7,2\n"));
        assert_eq!(Portfolio::read_csv(&buf[..], 500.0, 2012).unwrap(), pf);
    }
}
