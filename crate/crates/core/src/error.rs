use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, invalid hyperparameters, degenerate inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. asking for gradients of an empty tape.
    #[error("usage error: {0}")]
    Usage(String),

    /// An integrator produced a non-finite state or its step size underflowed.
    /// `last_valid` is the last grid index whose state is trustworthy.
    #[error("integration failed after grid index {last_valid}: {reason}")]
    Integration { last_valid: usize, reason: String },

    #[error("training failed: {0}")]
    Training(String),

    /// Validation loss went non-finite; carries the history up to that epoch.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        report: Box<crate::training::TrainReport>,
    },

    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. } | Error::Training(_) | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
