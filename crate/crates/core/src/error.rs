use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {cause}")]
    Wav { path: PathBuf, cause: String },

    #[error("{path}: {cause}")]
    Format { path: PathBuf, cause: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e}, scale {scale:e})")]
    NotPsd { eigenvalue: f64, scale: f64 },

    #[error("stretch ratio {ratio} outside [0.25, 4.0]")]
    StretchRatio { ratio: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, cause: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            cause: cause.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
