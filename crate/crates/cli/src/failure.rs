use std::fmt;
use std::path::Path;

pub const EXIT_IO: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SAMPLER: u8 = 3;
pub const EXIT_MISSING_SAMPLES: u8 = 4;
pub const EXIT_TRUNCATION: u8 = 5;

/// A failed command and its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(path: impl AsRef<Path>, err: std::io::Error) -> Self {
        Failure {
            code: EXIT_IO,
            message: format!("{}: {err}", path.as_ref().display()),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn missing_samples(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_MISSING_SAMPLES,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<crplus::Error> for Failure {
    fn from(err: crplus::Error) -> Self {
        use crplus::Error as E;
        let code = match &err {
            E::Io { .. } => EXIT_IO,
            E::Csv(e) if e.is_io_error() => EXIT_IO,
            E::Sampler(_) => EXIT_SAMPLER,
            E::Truncation(_) => EXIT_TRUNCATION,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}
