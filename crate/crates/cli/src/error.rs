//! Error taxonomy mapped onto process exit codes.

use thiserror::Error;

/// Exit codes: 0 success, 2 usage (handled by the argument parser),
/// 3 configuration, 4 data, 5 runtime.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Runtime(_) => 5,
        }
    }
}

impl From<harch::corpus::CorpusError> for CliError {
    fn from(e: harch::corpus::CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<harch::hierarchy::HierarchyError> for CliError {
    fn from(e: harch::hierarchy::HierarchyError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<harch::model::ModelError> for CliError {
    fn from(e: harch::model::ModelError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<harch::training::TrainError> for CliError {
    fn from(e: harch::training::TrainError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<harch::evaluation::EvalError> for CliError {
    fn from(e: harch::evaluation::EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<harch::prompting::PromptError> for CliError {
    fn from(e: harch::prompting::PromptError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
