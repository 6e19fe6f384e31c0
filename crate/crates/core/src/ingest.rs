//! Raw death and population files to a [`MortalityDataset`].
//!
//! Raw deaths: `year,age_group,gender,cause_label,count`.
//! Raw population: `year,age_group,gender,count`.
//! Both need a header row. Cause labels go through a [`CauseMapping`];
//! labels it does not know become cause 0. Counts from years up to the
//! comparability cutoff are multiplied by the label's factor and rounded
//! half up.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSummary, MortalityDataset};
use crate::error::{Error, Result};
use crate::model::{CauseId, CellIndex, Gender};

pub const DEFAULT_COMPARABILITY_CUTOFF: i32 = 1996;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauseMappingEntry {
    pub label: String,
    pub cause: CauseId,
    pub comparability_factor: f64,
}

/// Raw cause labels to model causes, with one comparability factor each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauseMapping {
    /// Names of causes `0..=K`.
    pub cause_names: Vec<String>,
    pub mappings: Vec<CauseMappingEntry>,
}

impl Default for CauseMapping {
    /// Ten cause groups with their ICD-9 to ICD-10 comparability factors.
    fn default() -> Self {
        let table = [
            ("infectious", 1.25),
            ("neoplasms", 1.0),
            ("endocrine", 1.01),
            ("mental", 0.78),
            ("nervous", 1.2),
            ("circulatory", 1.0),
            ("respiratory", 0.91),
            ("digestive", 1.05),
            ("external", 1.06),
            ("genitourinary", 1.14),
        ];
        let mut cause_names = vec!["not elsewhere defined".to_string()];
        cause_names.extend(table.iter().map(|(n, _)| n.to_string()));
        CauseMapping {
            cause_names,
            mappings: table
                .iter()
                .enumerate()
                .map(|(i, (label, f))| CauseMappingEntry {
                    label: label.to_string(),
                    cause: CauseId(i + 1),
                    comparability_factor: *f,
                })
                .collect(),
        }
    }
}

fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

impl CauseMapping {
    /// Number of non-idiosyncratic causes `K`.
    pub fn causes(&self) -> usize {
        self.cause_names.len().saturating_sub(1)
    }

    pub fn name(&self, cause: CauseId) -> &str {
        self.cause_names.get(cause.0).map_or("?", String::as_str)
    }

    /// Cause and factor of a raw label; unknown labels map to cause 0 with
    /// factor 1.
    pub fn lookup(&self, label: &str) -> (CauseId, f64, bool) {
        let key = normalize_label(label);
        self.mappings
            .iter()
            .find(|m| normalize_label(&m.label) == key)
            .map_or((CauseId::IDIOSYNCRATIC, 1.0, false), |m| {
                (m.cause, m.comparability_factor, true)
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.cause_names.len() < 2 {
            return Err(Error::InvalidParameter(
                "cause mapping needs cause 0 and at least one more".into(),
            ));
        }
        let mut seen = HashMap::new();
        for m in &self.mappings {
            if !(m.comparability_factor > 0.0) || !m.comparability_factor.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "comparability factor of {:?} must be positive",
                    m.label
                )));
            }
            if m.cause.0 > self.causes() {
                return Err(Error::InvalidParameter(format!(
                    "label {:?} maps to cause {} but only {} causes are named",
                    m.label,
                    m.cause,
                    self.causes()
                )));
            }
            if seen.insert(normalize_label(&m.label), ()).is_some() {
                return Err(Error::InvalidParameter(format!("label {:?} is mapped twice", m.label)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: CauseMapping = serde_json::from_reader(BufReader::new(f))?;
        m.validate()?;
        Ok(m)
    }
}

fn default_cutoff() -> Option<i32> {
    Some(DEFAULT_COMPARABILITY_CUTOFF)
}

fn default_age_groups() -> usize {
    crate::model::DEFAULT_AGE_GROUPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// First year of the dataset; the earliest year in the files if absent.
    #[serde(default)]
    pub base_year: Option<i32>,
    /// Factors apply to years up to and including this one; never if absent.
    #[serde(default = "default_cutoff")]
    pub comparability_cutoff_year: Option<i32>,
    #[serde(default = "default_age_groups")]
    pub age_groups: usize,
    /// Display labels of the age groups, e.g. `"80+"`.
    #[serde(default)]
    pub age_bands: Vec<String>,
    #[serde(default)]
    pub mapping: CauseMapping,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            base_year: None,
            comparability_cutoff_year: default_cutoff(),
            age_groups: default_age_groups(),
            age_bands: Vec::new(),
            mapping: CauseMapping::default(),
        }
    }
}

/// `count * factor` rounded half up for years up to the cutoff; `count`
/// otherwise.
///
/// The factor is taken to six decimals and the product is formed in integer
/// arithmetic, so half-way cases are decided exactly.
pub fn apply_comparability(count: u64, factor: f64, year: i32, config: &IngestConfig) -> u64 {
    match config.comparability_cutoff_year {
        Some(cutoff) if year <= cutoff => {
            let micro = (factor * 1e6).round() as u128;
            ((count as u128 * micro + 500_000) / 1_000_000) as u64
        }
        _ => count,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellYearCoverage {
    pub cell: String,
    pub year: i32,
    pub population: u64,
    pub deaths: u64,
    pub death_rows: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub summary: DatasetSummary,
    pub cause_names: Vec<String>,
    /// Deaths per label routed to cause 0 because the mapping lacks it.
    pub unmapped_labels: BTreeMap<String, u64>,
    pub adjusted_rows: u64,
    pub cell_years: Vec<CellYearCoverage>,
}

struct RawRow {
    year: i32,
    cell: CellIndex,
    label: Option<String>,
    count: u64,
}

fn read_raw<R: Read>(reader: R, with_label: bool, what: &str, age_groups: usize) -> Result<Vec<RawRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let want: &[&str] = if with_label {
        &["year", "age_group", "gender", "cause_label", "count"]
    } else {
        &["year", "age_group", "gender", "count"]
    };
    if header != want {
        return Err(Error::Data(format!(
            "{what} columns must be {}; found {}",
            want.join(","),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let year: i32 = field(0)
            .parse()
            .map_err(|_| Error::Data(format!("{what} row {row}: bad year {:?}", field(0))))?;
        let age: usize = field(1)
            .parse()
            .map_err(|_| Error::Data(format!("{what} row {row}: bad age group {:?}", field(1))))?;
        let gender: Gender = field(2).parse()?;
        let cell =
            CellIndex::new(age, gender, age_groups).map_err(|e| Error::Data(format!("{what} row {row}: {e}")))?;
        let count_field = field(want.len() - 1);
        let count: i64 = count_field
            .parse()
            .map_err(|_| Error::Data(format!("{what} row {row}: bad count {count_field:?}")))?;
        if count < 0 {
            return Err(Error::Data(format!("{what} row {row}: negative count {count}")));
        }
        rows.push(RawRow {
            year,
            cell,
            label: with_label.then(|| field(3).to_string()),
            count: count as u64,
        });
    }
    Ok(rows)
}

/// Builds the dataset from raw deaths and population readers.
pub fn load_dataset_from_readers<D: Read, P: Read>(
    deaths: D,
    population: P,
    config: &IngestConfig,
) -> Result<(MortalityDataset, CoverageReport)> {
    config.mapping.validate()?;
    let a = config.age_groups;
    let deaths = read_raw(deaths, true, "deaths", a)?;
    let population = read_raw(population, false, "population", a)?;
    if population.is_empty() {
        return Err(Error::Data("population file has no rows".into()));
    }
    let all_years = deaths.iter().chain(&population).map(|r| r.year);
    let first = config.base_year.unwrap_or_else(|| all_years.clone().min().unwrap());
    let last = all_years.max().unwrap();
    if let Some(bad) = deaths.iter().chain(&population).find(|r| r.year < first) {
        return Err(Error::Data(format!("year {} precedes base year {first}", bad.year)));
    }
    let years = (last - first + 1) as usize;
    let k = config.mapping.causes();
    let mut data = MortalityDataset::zeros(a, k, first, years);

    let mut seen_pop = vec![false; 2 * a * years];
    for r in &population {
        let (c, y) = (r.cell.linear(), (r.year - first) as usize);
        if std::mem::replace(&mut seen_pop[c * years + y], true) {
            return Err(Error::Data(format!(
                "duplicate population row for {} {}",
                r.cell, r.year
            )));
        }
        data.set_population(c, y, r.count);
    }
    if let Some(i) = seen_pop.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "missing population row for {} {}",
            CellIndex::from_linear(i / years),
            first + (i % years) as i32
        )));
    }

    let mut seen_deaths = HashMap::new();
    let mut unmapped = BTreeMap::new();
    let mut adjusted = 0;
    let mut rows_per = vec![0u64; 2 * a * years];
    for r in &deaths {
        let label = r.label.as_deref().unwrap_or("");
        let key = (r.year, r.cell.linear(), normalize_label(label));
        if seen_deaths.insert(key, ()).is_some() {
            return Err(Error::Data(format!(
                "duplicate deaths row for {} {} {label:?}",
                r.cell, r.year
            )));
        }
        let (cause, factor, known) = config.mapping.lookup(label);
        if !known {
            *unmapped.entry(label.to_string()).or_insert(0) += r.count;
        }
        let n = apply_comparability(r.count, factor, r.year, config);
        adjusted += (n != r.count) as u64;
        let (c, y) = (r.cell.linear(), (r.year - first) as usize);
        rows_per[c * years + y] += 1;
        data.set_deaths(c, cause.0, y, data.deaths(c, cause.0, y) + n);
    }
    data.validate()?;

    let mut cell_years = Vec::with_capacity(2 * a * years);
    for y in 0..years {
        for cell in CellIndex::all(a) {
            let c = cell.linear();
            cell_years.push(CellYearCoverage {
                cell: cell.to_string(),
                year: first + y as i32,
                population: data.population(c, y),
                deaths: data.cell_total(c, y),
                death_rows: rows_per[c * years + y],
            });
        }
    }
    let report = CoverageReport {
        summary: data.summary(),
        cause_names: config.mapping.cause_names.clone(),
        unmapped_labels: unmapped,
        adjusted_rows: adjusted,
        cell_years,
    };
    Ok((data, report))
}

pub fn load_dataset(
    deaths_csv: &Path,
    population_csv: &Path,
    config: &IngestConfig,
) -> Result<(MortalityDataset, CoverageReport)> {
    let d = File::open(deaths_csv).map_err(|e| Error::io(deaths_csv, e))?;
    let p = File::open(population_csv).map_err(|e| Error::io(population_csv, e))?;
    load_dataset_from_readers(BufReader::new(d), BufReader::new(p), config)
}

/// Crude death rate of one cell and cause per year; `None` where the
/// population is zero.
pub fn emit_rate_series(data: &MortalityDataset, cell: CellIndex, cause: CauseId) -> Result<Vec<(i32, Option<f64>)>> {
    if cell.age_group == 0 || cell.age_group > data.age_groups() || cause.0 > data.causes() {
        return Err(Error::InvalidParameter(format!(
            "{cell} / cause {cause} is outside the dataset"
        )));
    }
    let c = cell.linear();
    Ok((0..data.years())
        .map(|y| {
            let m = data.population(c, y);
            let rate = (m > 0).then(|| data.deaths(c, cause.0, y) as f64 / m as f64);
            (data.base_year() + y as i32, rate)
        })
        .collect())
}

/// `year,death_rate` rows; missing rates are written as `NA`.
pub fn write_rate_series<W: Write>(series: &[(i32, Option<f64>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["year", "death_rate"])?;
    for (year, rate) in series {
        let r = rate.map_or_else(|| "NA".to_string(), |r| format!("{r:?}"));
        w.write_record([year.to_string(), r])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
