use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The fitted density vanishes at an observation, so the log-likelihood
    /// is minus infinity.
    #[error("support-deficient: density is zero at observation x = {x}")]
    SupportDeficient { x: f64 },

    #[error("invalid perturbation at x = {x}: {reason}")]
    InvalidPerturbation { x: f64, reason: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> KmError {
    KmError::InvalidArgument(msg.into())
}

impl From<std::io::Error> for KmError {
    fn from(e: std::io::Error) -> Self {
        KmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KmError>;
