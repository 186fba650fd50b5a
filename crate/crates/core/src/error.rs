use std::path::PathBuf;

use thiserror::Error;

use crate::fine_solver::NewtonError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("velocity field is not discretely divergence free: max imbalance {max_imbalance:.3e} > {tolerance:.3e}")]
    Divergence { max_imbalance: f64, tolerance: f64 },

    #[error("{context}: {source}")]
    Newton {
        context: String,
        #[source]
        source: NewtonError,
    },

    #[error("local problem for coarse cell {alpha} failed: {source}")]
    LocalSolve {
        alpha: usize,
        #[source]
        source: NewtonError,
    },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last update {last_update:.3e})")]
    FixedPoint {
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },

    #[error("time step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("provider {provider}: {source}")]
    Provider {
        provider: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset generation aborted: {failures} failed samples out of {attempts} attempts")]
    DatasetFailures { failures: usize, attempts: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("surrogate failed the quality gate: validation MSE {validation_mse:.3e} > 0.1 x target variance {target_variance:.3e}")]
    QualityGate {
        validation_mse: f64,
        target_variance: f64,
    },

    #[error("relative error undefined: reference has zero norm")]
    UndefinedMetric,

    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category tag used by the CLI for its error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) | Error::Validation(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Newton { .. } | Error::LocalSolve { .. } => "newton",
            Error::FixedPoint { .. } => "fixed-point",
            Error::Step { source, .. } | Error::Provider { source, .. } => source.category(),
            Error::DatasetFailures { .. } => "dataset",
            Error::NonFiniteLoss { .. } => "training",
            Error::QualityGate { .. } => "quality-gate",
            Error::UndefinedMetric => "metric",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Internal(_) => "internal",
        }
    }
}
