//! Run configuration: one JSON file, overridden by command-line flags.
//!
//! Relative paths inside the file are resolved against the directory that
//! contains it. Precedence is flag, then file, then built-in default.

use std::path::{Path, PathBuf};

use crplus::model::DEFAULT_BASE_YEAR;
use crplus::TrendConstants;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `out` when absent.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; all cores when absent. Never changes any output.
    pub threads: Option<usize>,
    pub seed: u64,
    pub data: DataPaths,
    pub model: ModelSettings,
    pub ingest: IngestSettings,
    pub sampler: SamplerSettings,
    pub forecast: ForecastSettings,
    pub simulate: SimulateSettings,
    pub loss: LossSettings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Raw deaths: `year,age_group,gender,cause_label,count`.
    pub deaths: Option<PathBuf>,
    /// Raw population: `year,age_group,gender,count`.
    pub population: Option<PathBuf>,
    /// Cause mapping JSON; the built-in ten-cause mapping when absent.
    pub mapping: Option<PathBuf>,
    /// Normalized dataset; `<out>/dataset.csv` when absent.
    pub dataset: Option<PathBuf>,
    /// Posterior sample directory; `<out>/samples` when absent.
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Age groups of the raw data; also checked against datasets when given.
    pub age_groups: Option<usize>,
    /// Checked against the data when given.
    pub causes: Option<usize>,
    /// Calendar year of `t = 1`; the first data year when absent.
    pub base_year: Option<i32>,
    pub trends: TrendConstants,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub comparability_cutoff_year: Option<i32>,
    pub age_bands: Vec<String>,
    /// Also write crude rate series per cell and cause.
    pub rate_series: bool,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            comparability_cutoff_year: Some(crplus::ingest::DEFAULT_COMPARABILITY_CUTOFF),
            age_bands: Vec::new(),
            rate_series: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub n_steps: usize,
    pub burn_in: usize,
    pub chains: usize,
    /// One per chain; `seed + i` for chain `i` when absent.
    pub seeds: Option<Vec<u64>>,
    pub adapt_window: usize,
    pub thin: usize,
    pub sigma2_max: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let d = crplus::mcmc::SamplerConfig::default();
        SamplerSettings {
            n_steps: d.n_steps,
            burn_in: d.burn_in,
            chains: 4,
            seeds: None,
            adapt_window: d.adapt_window,
            thin: d.thin,
            sigma2_max: d.sigma2_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSettings {
    pub years: Vec<i32>,
    /// Cells such as `"a9.m"`; every cell when absent.
    pub cells: Option<Vec<String>>,
    /// Causes shown per block in the text table.
    pub top: usize,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        ForecastSettings {
            years: vec![2011, 2031, 2051],
            cells: None,
            top: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    /// True parameters as JSON.
    pub params: Option<PathBuf>,
    /// Population of every cell in every year.
    pub population: u64,
    pub years: usize,
    pub base_year: i32,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            params: None,
            population: 1_000_000,
            years: 25,
            base_year: DEFAULT_BASE_YEAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    /// Portfolio CSV: `cell,exposure_units,count`.
    pub portfolio: Option<PathBuf>,
    /// Fixed parameters as JSON; the posterior mean of the samples when absent.
    pub params: Option<PathBuf>,
    pub loss_unit: f64,
    pub valuation_year: i32,
    /// Largest loss represented; the total exposure when absent.
    pub n_max: Option<usize>,
    pub levels: Vec<f64>,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            portfolio: None,
            params: None,
            loss_unit: 1.0,
            valuation_year: 2011,
            n_max: None,
            levels: vec![0.99, 0.995],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// A configuration with every path made absolute.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    /// Overrides applied, paths as written.
    as_written: RunConfig,
}

fn absolute(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
    }

    /// Applies overrides and resolves paths; `config_path` is the file the
    /// configuration came from, if any.
    pub fn resolve(mut self, config_path: Option<&Path>, overrides: &Overrides) -> Result<Resolved, Failure> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        let mut as_written = self.clone();
        as_written.out_dir = None;
        as_written.threads = None;
        let cwd = std::env::current_dir().map_err(|e| Failure::io(".", e))?;
        let base = config_path
            .and_then(Path::parent)
            .map(|p| {
                if p.as_os_str().is_empty() {
                    cwd.clone()
                } else {
                    cwd.join(p)
                }
            })
            .unwrap_or_else(|| cwd.clone());
        for p in [
            &mut self.data.deaths,
            &mut self.data.population,
            &mut self.data.mapping,
            &mut self.data.dataset,
            &mut self.data.samples,
            &mut self.simulate.params,
            &mut self.loss.portfolio,
            &mut self.loss.params,
        ] {
            absolute(&base, p);
        }
        if let Some(t) = overrides.threads {
            self.threads = Some(t);
        }
        let out_dir = match (&overrides.out, &self.out_dir) {
            (Some(o), _) => cwd.join(o),
            (None, Some(o)) => base.join(o),
            (None, None) => cwd.join("out"),
        };
        self.out_dir = Some(out_dir.clone());
        if self.threads == Some(0) {
            return Err(Failure::validation("threads must be at least 1"));
        }
        Ok(Resolved {
            config: self,
            out_dir,
            as_written,
        })
    }
}

impl Resolved {
    pub fn dataset_path(&self) -> PathBuf {
        self.config
            .data
            .dataset
            .clone()
            .unwrap_or_else(|| self.out_dir.join("dataset.csv"))
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.config
            .data
            .samples
            .clone()
            .unwrap_or_else(|| self.out_dir.join("samples"))
    }

    /// SHA-256 of the configuration as written, with flags applied and the
    /// output directory and thread count removed. Neither of those affects
    /// results.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.as_written).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
