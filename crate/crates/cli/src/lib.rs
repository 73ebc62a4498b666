//! Command-line front end: training (whole path or forward selection),
//! pruning sweeps, evaluation, path export and the synthetic check battery.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod synth;

use std::fmt;

pub use commands::{cmd_eval, cmd_path_export, cmd_prune, cmd_train, run, EvalReport, Metrics};
pub use config::{Command, RunConfig};
pub use synth::{cmd_synth_check, SynthReport};

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Io(String),
    /// A synthetic check did not pass.
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Divergence(m) => write!(f, "numeric divergence: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<splitlbi::Error> for CliError {
    fn from(e: splitlbi::Error) -> Self {
        use splitlbi::Error as E;
        match e {
            E::Divergence { .. } => CliError::Divergence(e.to_string()),
            E::Io(_) | E::Format { .. } | E::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
