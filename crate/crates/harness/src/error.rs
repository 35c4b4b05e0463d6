use thiserror::Error;

/// Errors raised by harness subcommands.
#[derive(Error, Debug)]
pub enum HarnessError {
    /// The run configuration is unusable.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Library(#[from] latstruct::Error),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use latstruct::Error as L;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Library(
                L::InvalidParameter { .. } | L::ShapeMismatch { .. } | L::EnumerationCap { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
