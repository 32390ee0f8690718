//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SculptError {
    /// Matrix shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    Dimension {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A scalar argument is outside its valid range.
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// An operation was called on a value in the wrong state
    /// (e.g. mask operations on an adapter that has no masks).
    #[error("invalid state: {0}")]
    State(String),

    /// Normalization is undefined for the given input.
    #[error("normalization error: {0}")]
    Normalization(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// A run configuration is malformed or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SculptError>;

impl SculptError {
    pub(crate) fn dimension(
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    ) -> Self {
        SculptError::Dimension {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }

    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        SculptError::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
