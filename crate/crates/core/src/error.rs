use thiserror::Error;

/// Errors raised across the crate.
///
/// The harness maps these onto process exit codes: [`CrepeError::Parse`]
/// becomes 2, everything else 1.
#[derive(Debug, Error)]
pub enum CrepeError {
    /// Bad argument value (non-finite pixel, negative radius, length mismatch).
    #[error("invalid input: {0}")]
    Input(String),
    /// Inconsistent configuration (indivisible dimensions, K < 2, plan/offset mismatch).
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Malformed file contents.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    /// Loaded data that parses but violates an invariant.
    #[error("validation failed: {0}")]
    Validation(String),
    /// Training produced a non-finite loss.
    #[error("diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CrepeError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Self::Parse { offset, message: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, CrepeError>;
