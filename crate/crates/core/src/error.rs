use thiserror::Error;

/// Errors raised by the library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// Input lengths or shapes disagree with what an operation expects.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A value outside the operation's parameter domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Every entry of the score vector was masked with −∞.
    #[error("empty support: all scores are masked")]
    EmptySupport,

    /// A finite-difference probe produced a non-finite output.
    #[error("non-finite output at coordinate {coordinate} while probing input {input}")]
    NonFinite { input: usize, coordinate: usize },

    /// The domain lacks the requested oracle.
    #[error("domain `{domain}` does not support {capability}")]
    Unsupported {
        domain: &'static str,
        capability: &'static str,
    },

    /// Enumeration would exceed the configured structure cap.
    #[error("enumeration refused: domain has about {estimate:.3e} structures, cap is {cap}")]
    EnumerationCap { estimate: f64, cap: usize },

    /// A linear system was too ill-conditioned to trust.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// Sampling could not complete within the length budget.
    #[error("incomplete sample after {steps} steps")]
    IncompleteSample { steps: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

pub(crate) fn param_err(name: &'static str, reason: impl ToString) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.to_string(),
    }
}
