//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants carry the failing operation's name so a
/// message points at the call site even when bubbled up through the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not line up (both sides are spelled out).
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A value that must stay finite became NaN or infinite.
    #[error("{op}: non-finite value: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// A documented precondition was violated by the caller.
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },

    /// An index or label fell outside its valid range.
    #[error("{op}: out of range: {detail}")]
    Range { op: &'static str, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk artifact (tensor file, checkpoint, config).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric { op, detail: detail.into() }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }

    pub fn range(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Range { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
