use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum SpadeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance factorization failed (eps reached {eps:e})")]
    Factorization { eps: f64 },

    #[error("every threshold candidate selects an empty set")]
    NoFeasibleThreshold,

    #[error("OCC {k} failed to fit: {source}")]
    OccFit {
        k: usize,
        #[source]
        source: Box<SpadeError>,
    },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<SpadeError>,
    },

    #[error("training diverged at epoch {epoch} (non-finite loss); trace so far:\n{trace}")]
    Diverged { epoch: usize, trace: String },

    #[error("logistic oracle failed after {iterations} iterations (loss {loss})")]
    OracleDiverged { iterations: usize, loss: f64 },

    #[error("incompatible configuration: {0}")]
    Config(String),
}

impl SpadeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpadeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SpadeError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SpadeError>;
