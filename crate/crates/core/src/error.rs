use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coordinate {position} is not finite")]
    NonFinite { position: usize },

    #[error("{what} must contain at least {needed} point(s), got {found}")]
    TooFewPoints {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("expected a {expected} dataset, got {found}")]
    WrongDatasetKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Fit(#[from] crate::fit::FitError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}, line {line}: {message}")]
    Parse {
        origin: String,
        line: u64,
        message: String,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
