//! Crate error type and exit-status mapping.

use thiserror::Error;

/// Errors produced by any stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (sessions, datasets, ids that do not resolve).
    #[error("validation error: {0}")]
    Validation(String),

    /// Rejected configuration (unknown keys, unsatisfiable quotas, bad ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// Numeric failure (non-convergence, non-finite values, singular matrices).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Serialized artifact with a bad or mismatched format version.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("csv error: {other:?}")),
        }
    }
}

impl Error {
    /// Process exit status for this error: numeric errors exit 2, everything
    /// else exits 1.
    pub fn exit_status(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn missing(kind: &str, id: &str) -> Self {
        Error::Validation(format!("unknown {kind} '{id}'"))
    }
}
