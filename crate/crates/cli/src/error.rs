//! One error shape for the whole binary: a machine-parsable category plus a
//! human-readable message, printed as a single `error[category]: message`
//! line on stderr.

use std::fmt;

use ponder_core::CoreError;

#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("io", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category, self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        Self { category: err.category(), message: err.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
