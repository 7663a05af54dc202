use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("class balance violated: {0}")]
    Imbalanced(String),
    #[error("provenance violation: {0}")]
    Provenance(String),
    #[error("{0} out of range")]
    OutOfRange(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(expected: impl core::fmt::Debug, actual: impl core::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: alloc::format!("{expected:?}"),
            actual: alloc::format!("{actual:?}"),
        }
    }
}
