//! Batch front end for pulse synthesis and phase-invariant analysis.
//!
//! Exit codes: 0 success, 2 bad input (arguments, config, CSV, missing
//! artifacts), 3 numerical failure (non-finite propagation, ill-conditioned
//! phases, I/O while writing results).

pub mod commands;
pub mod config;

use phasefilter::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(config::ConfigError),
    Input(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) | CliError::Io(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "write failed: {m}"),
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_)
            | Error::IllConditioned { .. }
            | Error::Embedding(_)
            | Error::DegenerateAngle(_)
            | Error::MissingInvariant(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
