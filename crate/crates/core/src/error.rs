use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates a documented invariant. `field` names the offending parameter.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("sideband {k} is not available: {reason}")]
    SidebandUnavailable { k: i32, reason: String },

    #[error("tag stream `{0}` is not sorted by time")]
    UnsortedStream(&'static str),

    #[error("curve never crosses half maximum on the {0} side of the peak")]
    NoHalfMaximumCrossing(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("malformed record at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
