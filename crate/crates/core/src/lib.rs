//! Stochastic mortality with gamma-distributed cause-of-death risk factors.
//!
//! Deaths in each (age group, gender) cell are split additively over causes.
//! Causes `1..=K` share mean-one gamma risk factors across all cells, which
//! makes the model a CreditRisk+ portfolio and gives the loss distribution
//! of an annuity book exactly through Panjer recursion.
//!
//! ```
//! use crplus::model::{death_probability, CellIndex, Gender, ModelParams, TrendConstants};
//!
//! let params = ModelParams::flat(9, 10, TrendConstants::default(), 0.1);
//! let cell = CellIndex::new(9, Gender::Male, 9).unwrap();
//! assert_eq!(death_probability(cell, 1.0, &params), 0.5);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod forecast;
pub mod ingest;
pub mod layout;
pub mod likelihood;
pub mod mcmc;
pub mod model;
pub mod panjer;
pub mod simulate;
mod stats;

pub use dataset::MortalityDataset;
pub use error::{Error, Result};
pub use layout::{FreeLayout, ParamKind};
pub use model::{CauseId, CellIndex, Gender, ModelParams, TimeMapping, TrendConstants};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
