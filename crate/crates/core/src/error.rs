use thiserror::Error;

/// Errors raised anywhere in the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("only one class present: {0}")]
    EmptyClass(String),

    #[error("data consistency: {0}")]
    DataConsistency(String),

    #[error("degenerate scaler channel {channel}: min = max = {value}")]
    Scaler { channel: usize, value: f64 },

    #[error("architecture: {0}")]
    Architecture(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in parameter {index} at step {step}")]
    NonFiniteGradient { index: usize, step: u64 },

    #[error("fold split: {0}")]
    Split(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("Cox fit did not converge after {iterations} iterations (max |score| = {gradient_norm:.3e})")]
    Convergence { iterations: usize, gradient_norm: f64 },

    #[error("data: {0}")]
    Data(String),

    #[error("bootstrap: {failed} of {total} replicates failed (last error: {last})")]
    Bootstrap {
        failed: usize,
        total: usize,
        last: String,
    },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
