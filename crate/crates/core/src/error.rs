use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },

    #[error("unsupported layer `{kind}`: {reason}")]
    UnsupportedLayer { kind: String, reason: String },

    #[error("{path}: parse error at byte {offset}: {reason}")]
    Parse { path: PathBuf, offset: u64, reason: String },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("checksum mismatch: manifest records {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
