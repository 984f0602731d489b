//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by constructors and evaluation routines.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// An argument fell outside the documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A distribution collapsed to a point mass and has no density.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    /// Containers that must agree in length did not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Self::Degenerate(msg.into())
    }

    pub(crate) fn dimensions(msg: impl Into<String>) -> Self {
        Self::DimensionMismatch(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
