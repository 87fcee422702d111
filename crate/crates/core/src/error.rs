use thiserror::Error;

use crate::driver::IterationTrace;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset contains no ratings")]
    EmptyDataset,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("duplicate observation ({row}, {col}){}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Duplicate { row: u64, col: u64, line: Option<usize> },

    #[error("index ({row}, {col}) out of range for a {m}x{n} matrix")]
    OutOfRange { row: usize, col: usize, m: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("backtracking did not terminate after {0} trials")]
    BacktrackingExhausted(usize),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("numerical failure: {message}")]
    NumericalFailure { message: String, trace: Box<IterationTrace> },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
