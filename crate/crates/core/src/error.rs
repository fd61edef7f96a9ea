use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("point is not part of the indexed set of the empirical kernel")]
    NotInIndexedSet,

    #[error("point is outside the decision set")]
    NotInDecisionSet,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("matrix factorization failed after {attempts} jitter escalations")]
    Factorization { attempts: usize },

    #[error("information gain budget exceeded: requested t={requested}, budget {budget}")]
    InfoGainBudget { requested: usize, budget: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("missing reference run for {0}")]
    MissingReference(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParameter { .. }
                | Error::Json(_)
                | Error::Io { .. }
                | Error::Csv { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
