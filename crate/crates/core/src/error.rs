use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument or parameter violates its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two inputs disagree on the (age, gender, cause, year) grid.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input data violates a dataset invariant.
    #[error("data validation failed: {0}")]
    Data(String),

    /// Data are too sparse to support the requested computation.
    #[error("insufficient data coverage: {0}")]
    Coverage(String),

    /// The sampler reached a state that should be unreachable.
    #[error("sampler invariant violated: {0}")]
    Sampler(String),

    /// A loss distribution lost more probability mass than allowed beyond
    /// its truncation point.
    #[error("truncated distribution: {0}")]
    Truncation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the content of the inputs rather than the
    /// ability to read or write them.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Shape(_) | Error::Data(_) | Error::Coverage(_)
        )
    }
}
