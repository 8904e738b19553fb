use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("group `{0}` has no observations")]
    EmptyGroup(String),

    #[error("unknown subject index {0}")]
    UnknownSubject(usize),

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dataset failed validation ({} violation(s))", .0.len())]
    Validation(Vec<Violation>),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
