use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid model at {path}: {reason}")]
    InvalidModel { path: String, reason: String },

    #[error("invalid table at {location}: {reason}")]
    InvalidTable { location: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("construction is not a counterexample here: {0}")]
    Regime(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn model(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidModel {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn table(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidTable {
            location: location.into(),
            reason: reason.into(),
        }
    }
}
