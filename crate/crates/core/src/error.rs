use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    Shape {
        op: &'static str,
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("label {0} out of range 0..10")]
    Label(usize),

    #[error("{}: {reason}", path.display())]
    Dataset { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("unknown plan `{name}`; valid plans: {valid}")]
    UnknownPlan { name: String, valid: String },

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("epoch {epoch} is outside the schedule (0..{end})")]
    Schedule { epoch: usize, end: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{0}")]
    Invalid(String),

    #[error("fetch: {0}")]
    Fetch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected,
            actual,
        }
    }
}
