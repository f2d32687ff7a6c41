//! Error taxonomy shared across the pipeline.
//!
//! Variants are grouped so the CLI can map them onto stable exit codes:
//! usage/config errors, data errors, and numeric divergence.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("feature '{0}' has no non-null values; scaler cannot be fitted")]
    UnfittableFeature(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("timestamp mismatch: {0}")]
    TimestampMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable process exit code for scripting: 2 usage/config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param(_) | Error::Scenario(_) => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}
