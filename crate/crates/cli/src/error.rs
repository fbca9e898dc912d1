//! Command failures and their process exit codes.

use std::fmt;

use lagshape_core::Error;

/// Exit code 1: a requested check failed, or a run could not complete.
pub const EXIT_FAILURE: u8 = 1;
/// Exit code 2: the configuration (or command line) is invalid.
pub const EXIT_CONFIG: u8 = 2;
/// Exit code 3: the model file could not be loaded.
pub const EXIT_MODEL: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    ModelLoad(String),
    /// Names of the failed checks.
    Checks(Vec<String>),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::ModelLoad(_) => EXIT_MODEL,
            CliError::Checks(_) | CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::ModelLoad(m) => write!(f, "cannot load model: {m}"),
            CliError::Checks(names) => {
                write!(f, "{} check(s) failed: {}", names.len(), names.join(", "))
            }
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}
