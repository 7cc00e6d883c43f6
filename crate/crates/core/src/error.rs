//! Error types shared across the crate.

use crate::ids::ClassId;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any module in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Mathematically invalid input (zero vector, out-of-range scalar).
    #[error("domain error: {0}")]
    Domain(String),

    /// The gradient tape was already consumed by a backward pass.
    #[error("graph already consumed by a previous backward call")]
    GraphConsumed,

    /// A class id was not found where one was required.
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),

    /// A metric is undefined for the given matrix shape.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A serialized container failed validation.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }
}
