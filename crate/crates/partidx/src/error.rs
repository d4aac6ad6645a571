//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: truncated ({context})")]
    Truncated { path: String, context: String },

    #[error("{path}: record {record} has dimension {got}, expected {want}")]
    InconsistentDim {
        path: String,
        record: usize,
        got: u64,
        want: u64,
    },

    #[error("{path}: bad magic (expected {want})")]
    BadMagic { path: String, want: &'static str },

    #[error("{path}: {what}")]
    BadHeader { path: String, what: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("cosine metric requires unit rows; row {row} has |norm-1| = {dev:.3e}")]
    NotUnitNorm { row: usize, dev: f64 },

    #[error("dimension mismatch: {got} vs {want}")]
    DimMismatch { got: usize, want: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("balance is infeasible: {n} points, {m} bins, cap {cap}")]
    InfeasibleBalance { n: usize, m: usize, cap: usize },
}

impl Error {
    /// True for errors caused by malformed input files (as opposed to
    /// missing files, bad arguments, or plain i/o failures).
    pub fn is_format_violation(&self) -> bool {
        matches!(
            self,
            Error::Truncated { .. }
                | Error::InconsistentDim { .. }
                | Error::BadMagic { .. }
                | Error::BadHeader { .. }
                | Error::NonFinite { .. }
                | Error::ZeroNorm { .. }
                | Error::NotUnitNorm { .. }
        )
    }
}
