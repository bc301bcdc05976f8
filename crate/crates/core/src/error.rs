use thiserror::Error;

/// Errors shared by the core modules.
///
/// `Numeric` aborts carry enough context (layer or batch digest) to locate
/// the offending update without a debugger attached.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid configuration: bad shapes, out-of-range hyperparameters,
    /// inconsistent layouts.
    #[error("config error: {0}")]
    Config(String),

    /// An API contract was violated (e.g. stepping a finished episode).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value was produced during training.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint bytes could not be parsed.
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CoreError::Numeric(msg.into())
    }
}
