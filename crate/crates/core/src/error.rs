use std::path::PathBuf;

use crate::model::LinearModel;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("{source_name}: line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("solver did not converge after {iterations} iterations (criterion {criterion:.3e})")]
    NotConverged {
        iterations: usize,
        criterion: f64,
        last: Box<LinearModel>,
    },

    #[error("power iteration did not converge after {0} iterations")]
    PowerIteration(usize),

    #[error("privacy budget unreachable: {0}")]
    BudgetUnreachable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("report {path}: {message}")]
    Report { path: PathBuf, message: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}
