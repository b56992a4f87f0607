use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite derivative at state {state:?} (action {action})")]
    Integration { state: Vec<f64>, action: f64 },

    #[error("state outside model domain: {0}")]
    Domain(String),

    #[error("mass-balance consistency violated: {0}")]
    Consistency(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("transition cube entry ({row}, {action}): {source}")]
    CubeEntry {
        row: usize,
        action: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("config {path}: {message}")]
    Schema { path: String, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
