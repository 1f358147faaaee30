use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SfrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SfrError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed container, manifest or CSV content.
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Identifiers that do not resolve, or probes with no true match.
    #[error("unmatched identifier: {0}")]
    Unmatched(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no pyramid kernel fits a {height}x{width} map")]
    EmptyPyramid { height: usize, width: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),
}

impl SfrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SfrError::Io {
            path: path.into(),
            source,
        }
    }
}
