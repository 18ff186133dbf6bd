use std::path::PathBuf;

use thiserror::Error;

/// Stage failures, grouped by the exit status they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },

    #[error("stale input {}: digest {actual} does not match {expected} recorded by stage `{stage}`", path.display())]
    Stale {
        path: PathBuf,
        stage: String,
        expected: String,
        actual: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("convergence: {0}")]
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } | CliError::Stale { .. } | CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
        }
    }
}

impl From<deeplm::error::Error> for CliError {
    fn from(e: deeplm::error::Error) -> Self {
        use deeplm::error::Error as E;
        match e {
            E::Config { .. } => CliError::Config(e.to_string()),
            E::Convergence { .. } | E::NonFiniteGradient { .. } => CliError::Convergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
