use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("delay {delay} out of range for horizon {horizon}")]
    InvalidDelay { delay: usize, horizon: usize },

    #[error("flow time {0} outside [0, 1]")]
    InvalidTime(f64),

    #[error("token {token} has weight {weight} but no valid prior entry")]
    InvalidPrior { token: usize, weight: f64 },

    #[error("nonzero token weights require a prior chunk")]
    MissingPrior,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input {path}: {reason}")]
    MissingInput { path: String, reason: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for this error: 2 configuration, 3 missing or
    /// unreadable input, 4 numerical divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ShapeMismatch { .. }
            | Error::InvalidDelay { .. }
            | Error::InvalidTime(_)
            | Error::InvalidPrior { .. }
            | Error::MissingPrior => 2,
            Error::MissingInput { .. } | Error::Format { .. } => 3,
            Error::Divergence(_) | Error::NonFinite(_) => 4,
            Error::Io(_) => 1,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.to_string(),
        }
    }
}
