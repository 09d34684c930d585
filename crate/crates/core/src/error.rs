use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by log ingestion, metric computation, and scoring.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: duplicate record key ({key})")]
    DuplicateRecord {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("evaluation unit must be non-empty")]
    EmptyUnit,

    #[error("records in one unit must share model, dataset, and condition (found {found}, expected {expected})")]
    MixedUnit { expected: String, found: String },

    #[error("unit mismatch: {0}")]
    UnitMismatch(String),

    #[error("variance requires at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("AUROC undefined: every item is {0}")]
    DegenerateClasses(&'static str),

    #[error("average clean accuracy is zero; retention undefined")]
    ZeroCleanAccuracy,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
