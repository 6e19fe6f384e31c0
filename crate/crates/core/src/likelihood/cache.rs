//! Log-likelihood with cached intermediate terms for single-coordinate moves.
//!
//! A move of one cell parameter touches `q` or `w` of that cell only, so the
//! change in log-likelihood needs that cell's terms plus the `K x T` factor
//! terms, whose year totals are updated by difference. A move of `sigma2_k`
//! needs the `T` factor terms of cause `k` only.
//!
//! Differenced totals drift; [`IncrementalLikelihood::refresh`] rebuilds them
//! from scratch and should be called periodically.

use crate::dataset::MortalityDataset;
use crate::error::{Error, Result};
use crate::layout::{FreeLayout, ParamKind};
use crate::model::{laplace_cdf_unchecked, laplace_log_cdf, ModelParams};

use super::{ln_factorial, mixed_factor_term, xlogy};

#[derive(Clone, Debug)]
enum Pending {
    None,
    Cell {
        kind: ParamKind,
        value: f64,
        cell_term: f64,
    },
    Sigma2 {
        cause: usize,
        value: f64,
    },
}

#[derive(Clone, Debug)]
pub struct IncrementalLikelihood<'a> {
    data: &'a MortalityDataset,
    layout: FreeLayout,
    k1: usize,
    years: usize,
    trend_q: Vec<f64>,
    trend_w: Vec<f64>,
    pop: Vec<f64>,
    ln_pop: Vec<f64>,
    n: Vec<f64>,
    n_cause: Vec<f64>,
    log_factorials: f64,

    params: ModelParams,
    q: Vec<f64>,
    ln_q: Vec<f64>,
    w: Vec<f64>,
    ln_w: Vec<f64>,
    rho: Vec<f64>,
    cell_term: Vec<f64>,
    agg: Vec<f64>,
    factor_term: Vec<f64>,

    pending: Pending,
    s_q: Vec<f64>,
    s_ln_q: Vec<f64>,
    s_w: Vec<f64>,
    s_ln_w: Vec<f64>,
    s_rho: Vec<f64>,
    s_agg: Vec<f64>,
    s_factor: Vec<f64>,
    scores: Vec<f64>,
}

impl<'a> IncrementalLikelihood<'a> {
    pub fn new(data: &'a MortalityDataset, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if params.age_groups() != data.age_groups() || params.causes() != data.causes() {
            return Err(Error::Shape("parameters do not match dataset grid".into()));
        }
        let layout = FreeLayout::of(params);
        let cells = data.cells();
        let k1 = data.causes() + 1;
        let years = data.years();
        let mut trend_q = vec![0.0; cells * years];
        let mut pop = vec![0.0; cells * years];
        let mut ln_pop = vec![0.0; cells * years];
        for c in 0..cells {
            let tr = params.death_prob[c].trend;
            for y in 0..years {
                trend_q[c * years + y] = tr.apply((y + 1) as f64);
                let m = data.population(c, y) as f64;
                pop[c * years + y] = m;
                ln_pop[c * years + y] = m.ln();
            }
        }
        let mut trend_w = vec![0.0; k1 * years];
        for k in 0..k1 {
            let tr = params.weights.cause_trend[k];
            for y in 0..years {
                trend_w[k * years + y] = tr.apply((y + 1) as f64);
            }
        }
        let mut n = vec![0.0; cells * k1 * years];
        let mut log_factorials = 0.0;
        for c in 0..cells {
            for k in 0..k1 {
                for y in 0..years {
                    let d = data.deaths(c, k, y);
                    n[(c * k1 + k) * years + y] = d as f64;
                    log_factorials += ln_factorial(d);
                }
            }
        }
        let mut n_cause = vec![0.0; (k1 - 1) * years];
        for k in 1..k1 {
            for y in 0..years {
                n_cause[(k - 1) * years + y] = (0..cells).map(|c| n[(c * k1 + k) * years + y]).sum();
            }
        }
        let mut out = IncrementalLikelihood {
            data,
            layout,
            k1,
            years,
            trend_q,
            trend_w,
            pop,
            ln_pop,
            n,
            n_cause,
            log_factorials,
            params: params.clone(),
            q: vec![0.0; cells * years],
            ln_q: vec![0.0; cells * years],
            w: vec![0.0; cells * k1 * years],
            ln_w: vec![0.0; cells * k1 * years],
            rho: vec![0.0; cells * k1 * years],
            cell_term: vec![0.0; cells],
            agg: vec![0.0; (k1 - 1) * years],
            factor_term: vec![0.0; (k1 - 1) * years],
            pending: Pending::None,
            s_q: vec![0.0; years],
            s_ln_q: vec![0.0; years],
            s_w: vec![0.0; k1 * years],
            s_ln_w: vec![0.0; k1 * years],
            s_rho: vec![0.0; k1 * years],
            s_agg: vec![0.0; (k1 - 1) * years],
            s_factor: vec![0.0; (k1 - 1) * years],
            scores: vec![0.0; k1],
        };
        for c in 0..cells {
            out.compute_q(c, params.death_prob[c].alpha, params.death_prob[c].beta);
            out.q[c * years..(c + 1) * years].copy_from_slice(&out.s_q);
            out.ln_q[c * years..(c + 1) * years].copy_from_slice(&out.s_ln_q);
            out.compute_w(c, None);
            let range = c * k1 * years..(c + 1) * k1 * years;
            out.w[range.clone()].copy_from_slice(&out.s_w);
            out.ln_w[range.clone()].copy_from_slice(&out.s_ln_w);
            out.cell_term[c] = out.compute_cell(c, true, true);
            out.rho[range].copy_from_slice(&out.s_rho);
        }
        out.refresh();
        Ok(out)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn data(&self) -> &MortalityDataset {
        self.data
    }

    pub fn layout(&self) -> FreeLayout {
        self.layout
    }

    /// Current log-likelihood.
    pub fn value(&self) -> f64 {
        let cells: f64 = self.cell_term.iter().sum();
        let factors: f64 = self.factor_term.iter().sum();
        cells + factors - self.log_factorials
    }

    /// Rebuilds year totals and factor terms from the cell intensities.
    pub fn refresh(&mut self) {
        let cells = self.layout.cells();
        let (k1, years) = (self.k1, self.years);
        for k in 1..k1 {
            let s2 = self.params.variances.sigma2[k - 1];
            for y in 0..years {
                let total: f64 = (0..cells).map(|c| self.rho[(c * k1 + k) * years + y]).sum();
                let i = (k - 1) * years + y;
                self.agg[i] = total;
                self.factor_term[i] = mixed_factor_term(s2, self.n_cause[i], total);
            }
        }
    }

    /// Log-likelihood change if `kind` were set to `value`. The move is held
    /// until [`accept`](Self::accept) or the next call to `propose`.
    pub fn propose(&mut self, kind: ParamKind, value: f64) -> f64 {
        let (k1, years) = (self.k1, self.years);
        match kind {
            ParamKind::Sigma2 { cause } => {
                let row = (cause - 1) * years..cause * years;
                let mut delta = 0.0;
                for (j, i) in row.enumerate() {
                    let f = mixed_factor_term(value, self.n_cause[i], self.agg[i]);
                    self.s_factor[j] = f;
                    delta += f - self.factor_term[i];
                }
                self.pending = Pending::Sigma2 { cause, value };
                delta
            }
            _ => {
                let c = kind.cell().unwrap();
                let dp = &self.params.death_prob[c];
                let (mut alpha, mut beta) = (dp.alpha, dp.beta);
                let moves_q = match kind {
                    ParamKind::Alpha { .. } => {
                        alpha = value;
                        true
                    }
                    ParamKind::Beta { .. } => {
                        beta = value;
                        true
                    }
                    _ => false,
                };
                if moves_q {
                    self.compute_q(c, alpha, beta);
                } else {
                    self.compute_w(c, Some((kind, value)));
                }
                let cell_term = self.compute_cell(c, moves_q, !moves_q);
                let mut delta = cell_term - self.cell_term[c];
                for k in 1..k1 {
                    let s2 = self.params.variances.sigma2[k - 1];
                    let base = (c * k1 + k) * years;
                    for y in 0..years {
                        let i = (k - 1) * years + y;
                        let a = self.agg[i] - self.rho[base + y] + self.s_rho[k * years + y];
                        let a = a.max(0.0);
                        self.s_agg[i] = a;
                        let f = mixed_factor_term(s2, self.n_cause[i], a);
                        self.s_factor[i] = f;
                        delta += f - self.factor_term[i];
                    }
                }
                self.pending = Pending::Cell { kind, value, cell_term };
                delta
            }
        }
    }

    /// Commits the last proposed move.
    pub fn accept(&mut self) {
        let (k1, years) = (self.k1, self.years);
        match std::mem::replace(&mut self.pending, Pending::None) {
            Pending::None => {}
            Pending::Sigma2 { cause, value } => {
                self.params.variances.sigma2[cause - 1] = value;
                let row = (cause - 1) * years..cause * years;
                self.factor_term[row].copy_from_slice(&self.s_factor[..years]);
            }
            Pending::Cell { kind, value, cell_term } => {
                let c = kind.cell().unwrap();
                self.layout.set(&mut self.params, kind, value);
                match kind {
                    ParamKind::Alpha { .. } | ParamKind::Beta { .. } => {
                        self.q[c * years..(c + 1) * years].copy_from_slice(&self.s_q);
                        self.ln_q[c * years..(c + 1) * years].copy_from_slice(&self.s_ln_q);
                    }
                    _ => {
                        let range = c * k1 * years..(c + 1) * k1 * years;
                        self.w[range.clone()].copy_from_slice(&self.s_w);
                        self.ln_w[range].copy_from_slice(&self.s_ln_w);
                    }
                }
                let range = c * k1 * years..(c + 1) * k1 * years;
                self.rho[range].copy_from_slice(&self.s_rho);
                self.cell_term[c] = cell_term;
                self.agg.copy_from_slice(&self.s_agg);
                self.factor_term.copy_from_slice(&self.s_factor);
            }
        }
    }

    /// Discards the last proposed move.
    pub fn reject(&mut self) {
        self.pending = Pending::None;
    }

    fn compute_q(&mut self, c: usize, alpha: f64, beta: f64) {
        let years = self.years;
        for y in 0..years {
            let x = alpha + beta * self.trend_q[c * years + y];
            self.s_q[y] = laplace_cdf_unchecked(x);
            self.s_ln_q[y] = laplace_log_cdf(x);
        }
    }

    fn compute_w(&mut self, c: usize, change: Option<(ParamKind, f64)>) {
        let (k1, years) = (self.k1, self.years);
        let mut u = self.params.weights.u[c].clone();
        let mut v = self.params.weights.v[c].clone();
        match change {
            Some((ParamKind::U { cause, .. }, x)) => u[cause] = x,
            Some((ParamKind::V { cause, .. }, x)) => v[cause] = x,
            _ => {}
        }
        for y in 0..years {
            let mut max = f64::NEG_INFINITY;
            for k in 0..k1 {
                let s = u[k] + v[k] * self.trend_w[k * years + y];
                self.scores[k] = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for k in 0..k1 {
                let e = (self.scores[k] - max).exp();
                self.s_w[k * years + y] = e;
                sum += e;
            }
            let lse = sum.ln();
            for k in 0..k1 {
                self.s_w[k * years + y] /= sum;
                self.s_ln_w[k * years + y] = (self.scores[k] - max) - lse;
            }
        }
    }

    /// Cell term using the scratch `q` (if `new_q`) or `w` (if `new_w`),
    /// filling the scratch intensities.
    fn compute_cell(&mut self, c: usize, new_q: bool, new_w: bool) -> f64 {
        let (k1, years) = (self.k1, self.years);
        let mut total = 0.0;
        for k in 0..k1 {
            let base = (c * k1 + k) * years;
            for y in 0..years {
                let (q, ln_q) = if new_q {
                    (self.s_q[y], self.s_ln_q[y])
                } else {
                    (self.q[c * years + y], self.ln_q[c * years + y])
                };
                let (w, ln_w) = if new_w {
                    (self.s_w[k * years + y], self.s_ln_w[k * years + y])
                } else {
                    (self.w[base + y], self.ln_w[base + y])
                };
                let m = self.pop[c * years + y];
                let rho = if m == 0.0 { 0.0 } else { m * q * w };
                self.s_rho[k * years + y] = rho;
                let ln_rho = self.ln_pop[c * years + y] + ln_q + ln_w;
                total += xlogy(self.n[base + y], ln_rho);
                if k == 0 {
                    total -= rho;
                }
            }
        }
        total
    }
}
