//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates an operation precondition (even kernel, zero
    /// count, out-of-range index, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward or backward pass produced NaN or Inf.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// Malformed tensor dump or point-cloud file.
    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
