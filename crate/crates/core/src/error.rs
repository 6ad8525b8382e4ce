use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch between parameter sets: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown label column `{0}`")]
    UnknownLabelColumn(String),

    #[error("empty data split: {0}")]
    EmptySplit(String),

    #[error("class {class} has no examples left ({context})")]
    ClassVanished { class: usize, context: String },

    #[error("certification data overlaps prior-training data ({overlap} shared examples)")]
    CertificationOverlap { overlap: usize },

    #[error("certification set carries no prior-training provenance")]
    MissingProvenance,

    #[error("dataset {id} unavailable: {message}")]
    Fetch { id: String, message: String },

    #[error("checksum mismatch for cached {path}: expected {expected}, found {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
