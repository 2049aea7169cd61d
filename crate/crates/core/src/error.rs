use thiserror::Error;

/// Errors raised by the regression engine and its drivers.
#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl GpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GpError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, GpError>;
