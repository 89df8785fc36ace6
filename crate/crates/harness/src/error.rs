use std::path::PathBuf;

use rpr_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no training pairs")]
    NoPairs,

    #[error("no query frames")]
    EmptyQuery,

    #[error("non-finite loss in epoch {epoch}, batch {batch:?}")]
    NonFiniteLoss { epoch: usize, batch: Vec<String> },

    #[error("malformed report {path}: {reason}")]
    Report { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::NonFiniteLoss { .. } => EXIT_NUMERIC,
            HarnessError::Core(e) => match e {
                CoreError::Config(_) => EXIT_CONFIG,
                CoreError::NonFinite(_) | CoreError::DegenerateRotationInput(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
            HarnessError::NoPairs | HarnessError::EmptyQuery | HarnessError::Report { .. } | HarnessError::Io(_) => {
                EXIT_DATA
            }
        }
    }
}
