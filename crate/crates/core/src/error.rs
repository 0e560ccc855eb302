use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid initial condition: {0}")]
    InvalidInitialCondition(String),

    #[error("integration failure on path {path} at step {step}: {reason}")]
    IntegrationFailure {
        path: usize,
        step: usize,
        reason: String,
    },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("experiment inapplicable: {0}")]
    ExperimentInapplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
