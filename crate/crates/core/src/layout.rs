//! Flat view of the free (non-gauge) parameters.
//!
//! Order: all `alpha` (cells in canonical order), all `beta`, all free `u`
//! (cell-major, causes `1..=K`), all free `v`, then `sigma2_1..=sigma2_K`.
//! Trend constants are fixed and not part of the vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellIndex, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Alpha { cell: usize },
    Beta { cell: usize },
    U { cell: usize, cause: usize },
    V { cell: usize, cause: usize },
    Sigma2 { cause: usize },
}

impl ParamKind {
    /// Cell whose intensities this parameter moves, if any.
    pub fn cell(self) -> Option<usize> {
        match self {
            ParamKind::Alpha { cell }
            | ParamKind::Beta { cell }
            | ParamKind::U { cell, .. }
            | ParamKind::V { cell, .. } => Some(cell),
            ParamKind::Sigma2 { .. } => None,
        }
    }

    pub fn block(self) -> Block {
        match self {
            ParamKind::Alpha { .. } => Block::Alpha,
            ParamKind::Beta { .. } => Block::Beta,
            ParamKind::U { .. } => Block::U,
            ParamKind::V { .. } => Block::V,
            ParamKind::Sigma2 { .. } => Block::Sigma2,
        }
    }
}

/// Parameter families, visited in this order by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Alpha,
    Beta,
    U,
    V,
    Sigma2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeLayout {
    pub age_groups: usize,
    pub causes: usize,
}

impl FreeLayout {
    pub fn new(age_groups: usize, causes: usize) -> Self {
        FreeLayout { age_groups, causes }
    }

    pub fn of(params: &ModelParams) -> Self {
        FreeLayout::new(params.age_groups(), params.causes())
    }

    pub fn cells(&self) -> usize {
        2 * self.age_groups
    }

    pub fn len(&self) -> usize {
        let c = self.cells();
        2 * c + 2 * c * self.causes + self.causes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, index: usize) -> ParamKind {
        let c = self.cells();
        let k = self.causes;
        match index {
            i if i < c => ParamKind::Alpha { cell: i },
            i if i < 2 * c => ParamKind::Beta { cell: i - c },
            i if i < 2 * c + c * k => {
                let j = i - 2 * c;
                ParamKind::U {
                    cell: j / k,
                    cause: j % k + 1,
                }
            }
            i if i < 2 * c + 2 * c * k => {
                let j = i - 2 * c - c * k;
                ParamKind::V {
                    cell: j / k,
                    cause: j % k + 1,
                }
            }
            i => {
                assert!(i < self.len(), "free parameter index {i} out of range");
                ParamKind::Sigma2 {
                    cause: i - 2 * c - 2 * c * k + 1,
                }
            }
        }
    }

    pub fn index(&self, kind: ParamKind) -> usize {
        let c = self.cells();
        let k = self.causes;
        match kind {
            ParamKind::Alpha { cell } => cell,
            ParamKind::Beta { cell } => c + cell,
            ParamKind::U { cell, cause } => 2 * c + cell * k + cause - 1,
            ParamKind::V { cell, cause } => 2 * c + c * k + cell * k + cause - 1,
            ParamKind::Sigma2 { cause } => 2 * c + 2 * c * k + cause - 1,
        }
    }

    /// Stable column names, e.g. `alpha_a1.f`, `u_a9.m_k3`, `sigma2_k2`.
    pub fn names(&self) -> Vec<String> {
        (0..self.len())
            .map(|i| match self.kind(i) {
                ParamKind::Alpha { cell } => format!("alpha_{}", CellIndex::from_linear(cell)),
                ParamKind::Beta { cell } => format!("beta_{}", CellIndex::from_linear(cell)),
                ParamKind::U { cell, cause } => {
                    format!("u_{}_k{cause}", CellIndex::from_linear(cell))
                }
                ParamKind::V { cell, cause } => {
                    format!("v_{}_k{cause}", CellIndex::from_linear(cell))
                }
                ParamKind::Sigma2 { cause } => format!("sigma2_k{cause}"),
            })
            .collect()
    }

    pub fn check(&self, params: &ModelParams) -> Result<()> {
        if params.age_groups() != self.age_groups || params.causes() != self.causes {
            return Err(Error::Shape(format!(
                "parameters have {} age groups and {} causes, layout expects {} and {}",
                params.age_groups(),
                params.causes(),
                self.age_groups,
                self.causes
            )));
        }
        Ok(())
    }

    pub fn get(&self, params: &ModelParams, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Alpha { cell } => params.death_prob[cell].alpha,
            ParamKind::Beta { cell } => params.death_prob[cell].beta,
            ParamKind::U { cell, cause } => params.weights.u[cell][cause],
            ParamKind::V { cell, cause } => params.weights.v[cell][cause],
            ParamKind::Sigma2 { cause } => params.variances.sigma2[cause - 1],
        }
    }

    pub fn set(&self, params: &mut ModelParams, kind: ParamKind, value: f64) {
        match kind {
            ParamKind::Alpha { cell } => params.death_prob[cell].alpha = value,
            ParamKind::Beta { cell } => params.death_prob[cell].beta = value,
            ParamKind::U { cell, cause } => params.weights.u[cell][cause] = value,
            ParamKind::V { cell, cause } => params.weights.v[cell][cause] = value,
            ParamKind::Sigma2 { cause } => params.variances.sigma2[cause - 1] = value,
        }
    }

    pub fn extract(&self, params: &ModelParams) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(params, self.kind(i))).collect()
    }

    /// Writes `values` into `params`; gauge coordinates are left untouched.
    pub fn apply(&self, params: &mut ModelParams, values: &[f64]) {
        assert_eq!(values.len(), self.len());
        for (i, &x) in values.iter().enumerate() {
            self.set(params, self.kind(i), x);
        }
    }
}
