//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv row {row}: {reason}")]
    CsvParse { row: usize, reason: String },

    #[error("csv row {row}: {got} fields, expected {expected}")]
    InconsistentWidth {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{what}: length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("only {available} eligible samples, need {needed}")]
    InsufficientEligible { needed: usize, available: usize },

    #[error("model file format error: {0}")]
    ModelFormat(String),

    #[error("unsupported model file version {found} (supported: {supported})")]
    ModelVersion { found: u32, supported: u32 },

    #[error("no attainable threshold: the rejection rule never holds on ({beta}, 1]")]
    NoThreshold { beta: f64 },

    #[error("query failed: {0}")]
    Query(String),

    #[error("query run aborted after {completed} of {requested} queries: {reason}")]
    QueryRunAborted {
        completed: usize,
        requested: usize,
        reason: String,
    },

    #[error("service error: {0}")]
    Service(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
