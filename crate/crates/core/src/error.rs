use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateRotationInput(&'static str),

    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),

    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("retrieval map is empty")]
    EmptyMap,

    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no candidates to select from")]
    EmptyCandidates,

    #[error("malformed index file: {0}")]
    IndexFormat(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset layout error at {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("missing pose for {0}")]
    MissingPose(String),

    #[error("no frame could be associated ({skipped} rgb frames skipped)")]
    AssociationFailure { skipped: usize },

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
