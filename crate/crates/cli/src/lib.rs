//! Command implementations behind the `attnguide` binary. `reproduce` is
//! built from the same functions the single commands call.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

use attnguide::ablate::AblateError;
use attnguide::analysis::AnalysisError;
use attnguide::seq2seq::{ModelError, TrainError};
use attnguide::taskgen::TaskError;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "ATTNGUIDE_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for validation and file problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 2,
            _ => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Input(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Num(n) => CliError::Numeric(n.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<AblateError> for CliError {
    fn from(e: AblateError) -> Self {
        match e {
            AblateError::Train(t) => t.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}

/// `--out` if given, else `$ATTNGUIDE_OUT/<default>`, else `runs/<default>`.
pub fn resolve_out(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")).join(default))
}
