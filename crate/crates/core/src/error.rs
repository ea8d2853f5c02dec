//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model evaluation, transform construction, the
/// rate-distortion engine and the codecs.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or signal does not have the dimensions an operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// An operation that averages over calibration samples received none.
    #[error("empty calibration batch")]
    EmptyBatch,

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A matrix that must be symmetric is not.
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    /// Cholesky factorization failed; the matrix is not positive-definite.
    #[error("matrix is not positive-definite ({0}); regularize the gradient covariance")]
    NotPositiveDefinite(String),

    /// Ridge regularization has no scale to work against.
    #[error("cannot regularize an all-zero matrix")]
    ZeroMatrix,

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// An operation is undefined for the given input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed byte stream in one of the file formats.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
