use std::io;

use thiserror::Error;

/// Errors raised anywhere in the offline or online pipeline.
///
/// Each variant names the failing module so command-line messages can be
/// traced back without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[{module}] input error: {message}")]
    Input { module: &'static str, message: String },

    #[error("[{module}] schema error: {message}")]
    Schema { module: &'static str, message: String },

    #[error("[{module}] empty dataset: {message}")]
    EmptyDataset { module: &'static str, message: String },

    #[error("[{module}] parameter error: {message}")]
    Parameter { module: &'static str, message: String },

    #[error("[{module}] consistency error: {message}")]
    Consistency { module: &'static str, message: String },

    #[error("[{module}] format error: {message}")]
    Format { module: &'static str, message: String },

    #[error("[{module}] corruption error: {message}")]
    Corruption { module: &'static str, message: String },

    #[error("[{module}] i/o error: {source}")]
    Io {
        module: &'static str,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn input(module: &'static str, message: impl Into<String>) -> Self {
        Error::Input { module, message: message.into() }
    }

    pub(crate) fn schema(module: &'static str, message: impl Into<String>) -> Self {
        Error::Schema { module, message: message.into() }
    }

    pub(crate) fn parameter(module: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter { module, message: message.into() }
    }

    pub(crate) fn consistency(module: &'static str, message: impl Into<String>) -> Self {
        Error::Consistency { module, message: message.into() }
    }

    pub(crate) fn format(module: &'static str, message: impl Into<String>) -> Self {
        Error::Format { module, message: message.into() }
    }

    pub(crate) fn corruption(module: &'static str, message: impl Into<String>) -> Self {
        Error::Corruption { module, message: message.into() }
    }

    pub(crate) fn io(module: &'static str, source: io::Error) -> Self {
        Error::Io { module, source }
    }

    /// Process exit code: 2 for parameter/validation problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
