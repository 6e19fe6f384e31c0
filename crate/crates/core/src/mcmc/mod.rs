//! Random-walk Metropolis-Hastings within Gibbs over the free parameters.
//!
//! Each sweep visits every free coordinate once, in layout order (all
//! `alpha`, all `beta`, free `u`, free `v`, `sigma2`). Location parameters
//! get normal random-walk proposals. `sigma2_k` gets a normal proposal
//! truncated to `(0, sigma2_max)` and a Hastings correction for the
//! asymmetry. The prior is flat on that region.

mod diagnostics;
mod io;
mod sampler;
mod truncnorm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Block, FreeLayout};
use crate::model::ModelParams;

pub use diagnostics::{
    autocorrelation_lag1, diagnostics, effective_sample_size, split_rhat, CrossCorrelation, DiagnosticsReport,
    FactorValidation, ParameterDiagnostics,
};
pub use io::{read_samples, write_samples};
pub use sampler::{gibbs_sweep, initial_proposal_sd, run_chain, run_chains_parallel};
pub use truncnorm::{truncated_normal_log_density, truncated_normal_sample};

pub const ALL_BLOCKS: [Block; 5] = [Block::Alpha, Block::Beta, Block::U, Block::V, Block::Sigma2];

fn default_blocks() -> Vec<Block> {
    ALL_BLOCKS.to_vec()
}

fn default_thin() -> usize {
    1
}

fn default_sigma2_max() -> f64 {
    100.0
}

fn default_adapt_window() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total sweeps, burn-in included.
    pub n_steps: usize,
    pub burn_in: usize,
    /// One proposal scale per free parameter; derived from the local
    /// curvature of the likelihood at the starting point when absent.
    #[serde(default)]
    pub proposal_sd: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default = "default_adapt_window")]
    pub adapt_window: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_sigma2_max")]
    pub sigma2_max: f64,
    /// Parameter families that are updated; the rest stay at their
    /// starting values.
    #[serde(default = "default_blocks")]
    pub blocks: Vec<Block>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 35_000,
            burn_in: 5_000,
            proposal_sd: None,
            seed: 0,
            adapt_window: default_adapt_window(),
            thin: 1,
            sigma2_max: default_sigma2_max(),
            blocks: default_blocks(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, layout: &FreeLayout) -> Result<()> {
        if self.burn_in >= self.n_steps {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be below n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::InvalidParameter("thin and adapt_window must be positive".into()));
        }
        if !(self.sigma2_max > 0.0) || !self.sigma2_max.is_finite() {
            return Err(Error::InvalidParameter("sigma2_max must be finite and positive".into()));
        }
        if let Some(sd) = &self.proposal_sd {
            if sd.len() != layout.len() {
                return Err(Error::Shape(format!(
                    "{} proposal scales given for {} free parameters",
                    sd.len(),
                    layout.len()
                )));
            }
            if let Some(bad) = sd.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "proposal sd for {} must be finite and positive",
                    layout.names()[bad]
                )));
            }
        }
        Ok(())
    }
}

/// Acceptance rates after burn-in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub per_parameter: Vec<f64>,
    pub per_block: Vec<(Block, f64)>,
}

impl Acceptance {
    pub fn block(&self, block: Block) -> Option<f64> {
        self.per_block.iter().find(|(b, _)| *b == block).map(|(_, r)| *r)
    }
}

/// Post-burn-in draws of one chain.
///
/// Draws are kept as rows of free-parameter values; [`draw`](Self::draw)
/// rebuilds full parameters from the template, whose gauge coordinates are
/// zero and whose trend constants are fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub chain_id: usize,
    pub seed: u64,
    pub config: SamplerConfig,
    pub base_year: i32,
    pub template: ModelParams,
    pub acceptance: Acceptance,
    /// Proposal scales in effect after burn-in.
    pub proposal_sd: Vec<f64>,
    #[serde(skip)]
    pub(crate) values: Vec<f64>,
}

impl PosteriorSamples {
    pub fn layout(&self) -> FreeLayout {
        FreeLayout::of(&self.template)
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.layout().len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Free-parameter values of draw `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.layout().len();
        &self.values[i * w..(i + 1) * w]
    }

    /// Full parameters of draw `i`.
    pub fn draw(&self, i: usize) -> ModelParams {
        let mut p = self.template.clone();
        self.layout().apply(&mut p, self.row(i));
        p
    }

    pub fn draws(&self) -> impl Iterator<Item = ModelParams> + '_ {
        (0..self.len()).map(move |i| self.draw(i))
    }

    /// Trace of free parameter `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let w = self.layout().len();
        self.values.iter().skip(j).step_by(w).copied().collect()
    }

    /// Assembles samples from rows of free-parameter values.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rows(
        chain_id: usize,
        seed: u64,
        config: SamplerConfig,
        base_year: i32,
        template: ModelParams,
        acceptance: Acceptance,
        proposal_sd: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let width = FreeLayout::of(&template).len();
        if !values.len().is_multiple_of(width) {
            return Err(Error::Shape("sample values do not fill whole rows".into()));
        }
        Ok(PosteriorSamples {
            chain_id,
            seed,
            config,
            base_year,
            template,
            acceptance,
            proposal_sd,
            values,
        })
    }
}
