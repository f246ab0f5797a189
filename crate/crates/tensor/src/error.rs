use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: String,
        actual: String,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn mismatch(
    op: &'static str,
    dim: impl Into<String>,
    expected: impl ToString,
    actual: impl ToString,
) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        dim: dim.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        reason: reason.into(),
    }
}
