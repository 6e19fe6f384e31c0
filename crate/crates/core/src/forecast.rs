//! Posterior summaries of cause weights and death probabilities for
//! calendar years, and the tables built from them.
//!
//! Intervals are per-cause marginal nearest-rank 5% and 95% quantiles over
//! the posterior draws.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorSamples;
use crate::model::{cause_weights_into, death_probability, CauseId, CellIndex, ModelParams, TimeMapping};
use crate::stats;

/// A collection of parameter draws that can be visited one at a time.
pub trait Draws {
    fn draw_count(&self) -> usize;
    fn for_each_draw(&self, f: &mut dyn FnMut(&ModelParams));
}

impl Draws for [ModelParams] {
    fn draw_count(&self) -> usize {
        self.len()
    }

    fn for_each_draw(&self, f: &mut dyn FnMut(&ModelParams)) {
        self.iter().for_each(f);
    }
}

impl Draws for Vec<ModelParams> {
    fn draw_count(&self) -> usize {
        self.len()
    }

    fn for_each_draw(&self, f: &mut dyn FnMut(&ModelParams)) {
        self.iter().for_each(f);
    }
}

impl Draws for PosteriorSamples {
    fn draw_count(&self) -> usize {
        self.len()
    }

    fn for_each_draw(&self, f: &mut dyn FnMut(&ModelParams)) {
        let layout = self.layout();
        let mut p = self.template.clone();
        for i in 0..self.len() {
            layout.apply(&mut p, self.row(i));
            f(&p);
        }
    }
}

impl Draws for [PosteriorSamples] {
    fn draw_count(&self) -> usize {
        self.iter().map(|c| c.len()).sum()
    }

    fn for_each_draw(&self, f: &mut dyn FnMut(&ModelParams)) {
        for chain in self {
            chain.for_each_draw(f);
        }
    }
}

impl Draws for Vec<PosteriorSamples> {
    fn draw_count(&self) -> usize {
        self.as_slice().draw_count()
    }

    fn for_each_draw(&self, f: &mut dyn FnMut(&ModelParams)) {
        self.as_slice().for_each_draw(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let sorted = stats::sorted(values);
        Summary {
            mean: stats::mean(values),
            q05: stats::nearest_rank(&sorted, 0.05),
            q95: stats::nearest_rank(&sorted, 0.95),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub cause: CauseId,
    #[serde(flatten)]
    pub summary: Summary,
}

fn check_draws<D: Draws + ?Sized>(draws: &D, cell: CellIndex) -> Result<()> {
    if draws.draw_count() == 0 {
        return Err(Error::InvalidParameter("no posterior draws".into()));
    }
    let mut ok = true;
    let mut first = true;
    draws.for_each_draw(&mut |p| {
        if first {
            ok = cell.age_group >= 1 && cell.age_group <= p.age_groups();
            first = false;
        }
    });
    if !ok {
        return Err(Error::InvalidParameter(format!(
            "cell {cell} is outside the model grid"
        )));
    }
    Ok(())
}

/// Posterior summary of every cause weight of `cell` in `year`, in cause
/// order.
pub fn weight_posterior<D: Draws + ?Sized>(
    draws: &D,
    cell: CellIndex,
    year: i32,
    mapping: &TimeMapping,
) -> Result<Vec<WeightSummary>> {
    check_draws(draws, cell)?;
    let t = mapping.t_of_year(year);
    let mut per_cause: Vec<Vec<f64>> = Vec::new();
    let mut w = Vec::new();
    draws.for_each_draw(&mut |p| {
        let k1 = p.causes() + 1;
        if per_cause.is_empty() {
            per_cause = vec![Vec::with_capacity(draws.draw_count()); k1];
            w = vec![0.0; k1];
        }
        cause_weights_into(cell, t, p, &mut w);
        for (k, v) in w.iter().enumerate() {
            per_cause[k].push(*v);
        }
    });
    Ok(per_cause
        .iter()
        .enumerate()
        .map(|(k, v)| WeightSummary {
            cause: CauseId(k),
            summary: Summary::of(v),
        })
        .collect())
}

/// Causes ranked by posterior mean weight, highest first, ties by cause id.
pub fn rank(mut entries: Vec<WeightSummary>) -> Vec<WeightSummary> {
    entries.sort_by(|a, b| {
        b.summary
            .mean
            .total_cmp(&a.summary.mean)
            .then(a.cause.0.cmp(&b.cause.0))
    });
    entries
}

/// The `n` leading causes of `cell` in `year`.
pub fn top_causes<D: Draws + ?Sized>(
    draws: &D,
    cell: CellIndex,
    year: i32,
    mapping: &TimeMapping,
    n: usize,
) -> Result<Vec<WeightSummary>> {
    let all = weight_posterior(draws, cell, year, mapping)?;
    if n == 0 || n > all.len() {
        return Err(Error::InvalidParameter(format!(
            "can rank 1..={} causes, asked for {n}",
            all.len()
        )));
    }
    let mut ranked = rank(all);
    ranked.truncate(n);
    Ok(ranked)
}

/// Posterior summary of the death probability of `cell` in `year`.
pub fn death_rate_forecast<D: Draws + ?Sized>(
    draws: &D,
    cell: CellIndex,
    year: i32,
    mapping: &TimeMapping,
) -> Result<Summary> {
    check_draws(draws, cell)?;
    let t = mapping.t_of_year(year);
    let mut q = Vec::with_capacity(draws.draw_count());
    draws.for_each_draw(&mut |p| q.push(death_probability(cell, t, p)));
    Ok(Summary::of(&q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastBlock {
    pub cell: CellIndex,
    pub year: i32,
    /// All causes, ranked.
    pub entries: Vec<WeightSummary>,
    pub death_probability: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastTable {
    pub cause_names: Vec<String>,
    pub blocks: Vec<ForecastBlock>,
}

const CSV_HEADER: [&str; 7] = ["cell", "year", "rank", "cause", "mean", "q05", "q95"];

impl ForecastTable {
    /// One block per (cell, year), cells outermost.
    pub fn build<D: Draws + Sync + ?Sized>(
        draws: &D,
        cells: &[CellIndex],
        years: &[i32],
        mapping: &TimeMapping,
        cause_names: Vec<String>,
    ) -> Result<Self> {
        let jobs: Vec<(CellIndex, i32)> = cells.iter().flat_map(|&c| years.iter().map(move |&y| (c, y))).collect();
        let blocks = jobs
            .par_iter()
            .map(|&(cell, year)| {
                Ok(ForecastBlock {
                    cell,
                    year,
                    entries: rank(weight_posterior(draws, cell, year, mapping)?),
                    death_probability: death_rate_forecast(draws, cell, year, mapping)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForecastTable { cause_names, blocks })
    }

    fn cause_name(&self, cause: CauseId) -> String {
        self.cause_names
            .get(cause.0)
            .cloned()
            .unwrap_or_else(|| format!("cause_{}", cause.0))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for b in &self.blocks {
            for (rank, e) in b.entries.iter().enumerate() {
                w.write_record([
                    b.cell.to_string(),
                    b.year.to_string(),
                    (rank + 1).to_string(),
                    self.cause_name(e.cause),
                    format!("{:?}", e.summary.mean),
                    format!("{:?}", e.summary.q05),
                    format!("{:?}", e.summary.q95),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Reads the weight rows back. Death-probability summaries are not
    /// part of the CSV and come back as NaN.
    pub fn read_csv<R: Read>(reader: R, cause_names: Vec<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        if r.headers()?.iter().ne(CSV_HEADER) {
            return Err(Error::Data(format!(
                "forecast columns must be {}",
                CSV_HEADER.join(",")
            )));
        }
        let mut blocks: Vec<ForecastBlock> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = || Error::Data(format!("forecast row {}: malformed", line + 2));
            let cell: CellIndex = rec.get(0).ok_or_else(bad)?.parse()?;
            let year: i32 = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let name = rec.get(3).ok_or_else(bad)?;
            let cause = cause_names
                .iter()
                .position(|n| n == name)
                .or_else(|| name.strip_prefix("cause_").and_then(|k| k.parse().ok()))
                .map(CauseId)
                .ok_or_else(|| Error::Data(format!("forecast row {}: unknown cause {name:?}", line + 2)))?;
            let num = |i: usize| -> Result<f64> { rec.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
            let entry = WeightSummary {
                cause,
                summary: Summary {
                    mean: num(4)?,
                    q05: num(5)?,
                    q95: num(6)?,
                },
            };
            match blocks.last_mut() {
                Some(b) if b.cell == cell && b.year == year => b.entries.push(entry),
                _ => blocks.push(ForecastBlock {
                    cell,
                    year,
                    entries: vec![entry],
                    death_probability: Summary {
                        mean: f64::NAN,
                        q05: f64::NAN,
                        q95: f64::NAN,
                    },
                }),
            }
        }
        Ok(ForecastTable { cause_names, blocks })
    }

    /// `cell,year,mean,q05,q95` of the death probabilities.
    pub fn write_death_rates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell", "year", "mean", "q05", "q95"])?;
        for b in &self.blocks {
            let s = b.death_probability;
            w.write_record([
                b.cell.to_string(),
                b.year.to_string(),
                format!("{:?}", s.mean),
                format!("{:?}", s.q05),
                format!("{:?}", s.q95),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Leading `top` causes per cell with one column group per year.
    pub fn render_text(&self, top: usize) -> String {
        let mut out = String::new();
        let mut cells: Vec<CellIndex> = Vec::new();
        for b in &self.blocks {
            if !cells.contains(&b.cell) {
                cells.push(b.cell);
            }
        }
        let width = self.cause_names.iter().map(String::len).max().unwrap_or(8).max(8);
        for cell in cells {
            let _ = writeln!(out, "Leading death causes, {cell}");
            for b in self.blocks.iter().filter(|b| b.cell == cell) {
                let _ = writeln!(out, "  {}", b.year);
                for (i, e) in b.entries.iter().take(top).enumerate() {
                    let s = e.summary;
                    let _ = writeln!(
                        out,
                        "    {}. {:<width$}  {:.3}  ({:.3}, {:.3})",
                        i + 1,
                        self.cause_name(e.cause),
                        s.mean,
                        s.q05,
                        s.q95,
                    );
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Gender, TrendConstants};

    fn mapping() -> TimeMapping {
        TimeMapping::default()
    }

    #[test]
    fn single_draw_has_zero_width() {
        let p = vec![ModelParams::flat(2, 3, TrendConstants::default(), 0.1)];
        let cell = CellIndex::new(2, Gender::Male, 2).unwrap();
        for s in weight_posterior(&p, cell, 2011, &mapping()).unwrap() {
            assert_eq!(s.summary.mean, s.summary.q05);
            assert_eq!(s.summary.q95, s.summary.q05);
        }
        let q = death_rate_forecast(&p, cell, 2051, &mapping()).unwrap();
        assert_eq!(q.q05, q.q95);
    }

    #[test]
    fn ties_ranked_by_cause_id() {
        let p = vec![ModelParams::flat(1, 4, TrendConstants::default(), 0.1)];
        let cell = CellIndex::from_linear(0);
        let top = top_causes(&p, cell, 2011, &mapping(), 3).unwrap();
        let ids: Vec<usize> = top.iter().map(|e| e.cause.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(top_causes(&p, cell, 2011, &mapping(), 6).is_err());
        assert!(top_causes(&p, cell, 2011, &mapping(), 0).is_err());
    }

    #[test]
    fn dominant_cause_ranked_first() {
        let mut p = ModelParams::flat(1, 10, TrendConstants::default(), 0.1);
        p.weights.u[1][2] = 5.0;
        let top = top_causes(&vec![p], CellIndex::from_linear(1), 2031, &mapping(), 1).unwrap();
        assert_eq!(top[0].cause, CauseId(2));
    }

    #[test]
    fn empty_samples_rejected() {
        let p: Vec<ModelParams> = Vec::new();
        assert!(weight_posterior(&p, CellIndex::from_linear(0), 2011, &mapping()).is_err());
    }

    #[test]
    fn empty_table_is_header_only() {
        let p = vec![ModelParams::flat(1, 1, TrendConstants::default(), 0.1)];
        let t = ForecastTable::build(&p, &[], &[2011], &mapping(), vec![]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cell,year,rank,cause,mean,q05,q95\n");
    }
}
