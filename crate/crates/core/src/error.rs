use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// First grid time at which the integrated state stopped being finite.
    #[error("numerical blow-up at t = {time}")]
    NumericalBlowup { time: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue ≈ {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("optimization failed after {n_evals} evaluations: {reason}")]
    OptimizationFailed { reason: String, n_evals: usize },

    #[error("experiment failed: {failed} of {total} replications failed")]
    ExperimentFailed { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
