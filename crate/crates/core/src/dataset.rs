//! Population and death counts on the (age group, gender, cause, year) grid.
//!
//! The normalized CSV form has one row per cell-year:
//!
//! ```text
//! year,age_group,gender,population,cause_0,cause_1,...,cause_K
//! 1987,1,female,1234567,120,3,...
//! ```
//!
//! Rows are ordered by year, then cell. Years must be contiguous.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CauseId, CellIndex, Gender, TimeMapping};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MortalityDataset {
    age_groups: usize,
    causes: usize,
    base_year: i32,
    years: usize,
    /// `[cell][year]`
    population: Vec<u64>,
    /// `[cell][cause][year]`
    deaths: Vec<u64>,
}

impl MortalityDataset {
    /// Empty dataset (all counts zero) for the given grid.
    pub fn zeros(age_groups: usize, causes: usize, base_year: i32, years: usize) -> Self {
        let cells = 2 * age_groups;
        MortalityDataset {
            age_groups,
            causes,
            base_year,
            years,
            population: vec![0; cells * years],
            deaths: vec![0; cells * (causes + 1) * years],
        }
    }

    pub fn age_groups(&self) -> usize {
        self.age_groups
    }

    pub fn cells(&self) -> usize {
        2 * self.age_groups
    }

    /// Number of non-idiosyncratic causes `K`.
    pub fn causes(&self) -> usize {
        self.causes
    }

    pub fn years(&self) -> usize {
        self.years
    }

    pub fn base_year(&self) -> i32 {
        self.base_year
    }

    pub fn time_mapping(&self) -> TimeMapping {
        TimeMapping {
            base_year: self.base_year,
            years: self.years,
        }
    }

    /// Population of `cell` in year index `y` (0-based; model time `y + 1`).
    #[inline]
    pub fn population(&self, cell: usize, y: usize) -> u64 {
        self.population[cell * self.years + y]
    }

    #[inline]
    pub fn deaths(&self, cell: usize, cause: usize, y: usize) -> u64 {
        self.deaths[(cell * (self.causes + 1) + cause) * self.years + y]
    }

    pub fn set_population(&mut self, cell: usize, y: usize, value: u64) {
        self.population[cell * self.years + y] = value;
    }

    pub fn set_deaths(&mut self, cell: usize, cause: usize, y: usize, value: u64) {
        self.deaths[(cell * (self.causes + 1) + cause) * self.years + y] = value;
    }

    /// Deaths from all causes in a cell-year.
    pub fn cell_total(&self, cell: usize, y: usize) -> u64 {
        (0..=self.causes).map(|k| self.deaths(cell, k, y)).sum()
    }

    /// `n_k(t)`: deaths from `cause` summed over all cells.
    pub fn cause_total(&self, cause: CauseId, y: usize) -> u64 {
        (0..self.cells()).map(|c| self.deaths(c, cause.0, y)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.age_groups == 0 || self.causes == 0 {
            return Err(Error::Shape(
                "dataset needs at least one age group and one risk factor".into(),
            ));
        }
        if self.years < 2 {
            return Err(Error::Coverage(format!(
                "at least two years of data are required, got {}",
                self.years
            )));
        }
        for c in 0..self.cells() {
            for y in 0..self.years {
                let total = self.cell_total(c, y);
                let m = self.population(c, y);
                if total > m {
                    return Err(Error::Data(format!(
                        "cell {} year {}: {total} deaths exceed population {m}",
                        CellIndex::from_linear(c),
                        self.base_year + y as i32
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "year".to_string(),
            "age_group".into(),
            "gender".into(),
            "population".into(),
        ];
        header.extend((0..=self.causes).map(|k| format!("cause_{k}")));
        w.write_record(&header)?;
        for y in 0..self.years {
            for cell in CellIndex::all(self.age_groups) {
                let c = cell.linear();
                let mut rec = vec![
                    (self.base_year + y as i32).to_string(),
                    cell.age_group.to_string(),
                    cell.gender.to_string(),
                    self.population(c, y).to_string(),
                ];
                rec.extend((0..=self.causes).map(|k| self.deaths(c, k, y).to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let fixed = ["year", "age_group", "gender", "population"];
        for (i, name) in fixed.iter().enumerate() {
            if header.get(i) != Some(*name) {
                return Err(Error::Data(format!(
                    "normalized dataset column {i} must be {name:?}, found {:?}",
                    header.get(i)
                )));
            }
        }
        let causes = header
            .len()
            .checked_sub(5)
            .ok_or_else(|| Error::Data("normalized dataset needs at least cause_0 and cause_1 columns".into()))?;
        for k in 0..=causes {
            let want = format!("cause_{k}");
            if header.get(4 + k) != Some(want.as_str()) {
                return Err(Error::Data(format!("expected column {want}")));
            }
        }

        struct Row {
            year: i32,
            cell: CellIndex,
            population: u64,
            deaths: Vec<u64>,
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim();
            let parse_u = |i: usize| -> Result<u64> {
                field(i).parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}: column {} is not a non-negative integer: {:?}",
                        line + 2,
                        header.get(i).unwrap_or("?"),
                        field(i)
                    ))
                })
            };
            let year: i32 = field(0)
                .parse()
                .map_err(|_| Error::Data(format!("row {}: bad year {:?}", line + 2, field(0))))?;
            let age_group = parse_u(1)? as usize;
            if age_group == 0 {
                return Err(Error::Data(format!("row {}: age groups start at 1", line + 2)));
            }
            let gender: Gender = field(2).parse()?;
            rows.push(Row {
                year,
                cell: CellIndex { age_group, gender },
                population: parse_u(3)?,
                deaths: (0..=causes).map(|k| parse_u(4 + k)).collect::<Result<_>>()?,
            });
        }
        if rows.is_empty() {
            return Err(Error::Data("normalized dataset has no rows".into()));
        }
        let base_year = rows.iter().map(|r| r.year).min().unwrap();
        let last_year = rows.iter().map(|r| r.year).max().unwrap();
        let age_groups = rows.iter().map(|r| r.cell.age_group).max().unwrap();
        let years = (last_year - base_year + 1) as usize;
        let mut out = MortalityDataset::zeros(age_groups, causes, base_year, years);
        let mut seen = vec![false; out.cells() * years];
        for row in rows {
            let c = row.cell.linear();
            let y = (row.year - base_year) as usize;
            if std::mem::replace(&mut seen[c * years + y], true) {
                return Err(Error::Data(format!("duplicate row for {} {}", row.cell, row.year)));
            }
            out.set_population(c, y, row.population);
            for (k, d) in row.deaths.into_iter().enumerate() {
                out.set_deaths(c, k, y, d);
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "missing row for {} {}",
                CellIndex::from_linear(i / years),
                base_year + (i % years) as i32
            )));
        }
        out.validate()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    /// Summary used in coverage reports.
    pub fn summary(&self) -> DatasetSummary {
        let total_deaths = self.deaths.iter().sum();
        let empty_cell_years = (0..self.cells())
            .flat_map(|c| (0..self.years).map(move |y| (c, y)))
            .filter(|&(c, y)| self.population(c, y) == 0)
            .count();
        DatasetSummary {
            age_groups: self.age_groups,
            causes: self.causes,
            first_year: self.base_year,
            last_year: self.base_year + self.years as i32 - 1,
            total_deaths,
            deaths_by_cause: (0..=self.causes)
                .map(|k| (0..self.years).map(|y| self.cause_total(CauseId(k), y)).sum())
                .collect(),
            empty_cell_years,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub age_groups: usize,
    pub causes: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub total_deaths: u64,
    pub deaths_by_cause: Vec<u64>,
    pub empty_cell_years: usize,
}
