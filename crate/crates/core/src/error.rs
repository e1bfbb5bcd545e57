use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimators, data utilities and model persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is rank deficient at column {column}")]
    DegenerateMatrix { column: usize },

    #[error("could not draw a non-degenerate matrix after {attempts} attempts")]
    RngDegeneracy { attempts: usize },

    #[error("refinement width {requested} exceeds current cell width {current}")]
    InvalidRefinement { current: f64, requested: f64 },

    #[error("point {0:?} lies outside the unit cube")]
    OutOfDomain(Vec<f64>),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model checksum mismatch (expected {expected}, found {found})")]
    Checksum { expected: String, found: String },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
