use std::path::PathBuf;

use cbt_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{op}: dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dims {
        op: &'static str,
        what: String,
        expected: String,
        actual: String,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dims_err(
    op: &'static str,
    what: impl Into<String>,
    expected: impl ToString,
    actual: impl ToString,
) -> Error {
    Error::Dims {
        op,
        what: what.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        op,
        reason: reason.into(),
    }
}
