use thiserror::Error;

/// Errors produced by samplers, solvers and the run harness.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A rollout produced a NaN/Inf; carries the offending time step.
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("training diverged at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },

    #[error("GA failure at generation {generation}, population {population}: {what}")]
    GaFailure {
        generation: usize,
        population: usize,
        what: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl SolverError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SolverError::NonFinite { .. }
                | SolverError::Diverged { .. }
                | SolverError::GaFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;
