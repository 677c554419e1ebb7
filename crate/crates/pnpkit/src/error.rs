//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any pnpkit operation.
#[derive(Debug, Error)]
pub enum PnpError {
    /// Two buffers (or an operator and a buffer) disagree on shape.
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A scalar or structural argument is out of its documented domain.
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// A numeric operation produced NaN or infinity.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Conjugate gradient hit a non-finite value (typically a violated
    /// SPD contract).
    #[error("conjugate gradient diverged at iteration {iteration}")]
    CgDiverged { iteration: usize },

    /// A file could not be decoded; `offset` is the byte position of the
    /// first unusable input.
    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: usize,
        message: String,
    },

    /// An experiment configuration is inconsistent; `field` is the path of
    /// the offending entry.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PnpError>;
