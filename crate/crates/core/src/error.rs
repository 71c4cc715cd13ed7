use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): expected {expected}, got {actual}")]
    Shape {
        node: usize,
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("backward requested before forward was run")]
    NotEvaluated,

    #[error("backward needs a scalar selection but output has shape {0:?}")]
    NonScalarSelection(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("mask optimisation diverged (lr = {lr})")]
    MaskDiverged { lr: f64 },

    #[error("{0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
