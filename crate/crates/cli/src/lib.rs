//! Library surface of the command-line tool. Each subcommand is an ordinary
//! function over a resolved [`config::RunConfig`], so the whole pipeline can
//! be driven in-process (tests do) or from the binary.

pub mod commands;
pub mod config;
pub mod manifest;

/// Config errors exit with code 2, runtime errors with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<kinsynth_core::Error> for CliError {
    fn from(e: kinsynth_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
