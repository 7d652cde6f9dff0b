use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AsotError>;

#[derive(Debug, Error)]
pub enum AsotError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero-norm row {row} in {what}")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure at iteration {iteration}: {detail}")]
    Numerical { iteration: usize, detail: String },

    #[error("item {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<AsotError>,
    },

    #[error("{path}: bad magic, not a feature file")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated, expected {expected} bytes but found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },

    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl AsotError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AsotError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AsotError::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input (as opposed to a runtime or
    /// numerical failure).
    pub fn is_input_error(&self) -> bool {
        match self {
            AsotError::Numerical { .. } => false,
            AsotError::Batch { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}
