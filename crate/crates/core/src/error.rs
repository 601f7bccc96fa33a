use thiserror::Error;

/// Per-iteration observables of the gradient flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowRecord {
    pub iteration: usize,
    pub energy: f64,
    pub eigenvalue: f64,
    pub residual: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("gradient flow did not converge in {} iterations (last residual {:e})", .trajectory.len(), .trajectory.last().map_or(f64::NAN, |r| r.residual))]
    NotConverged { trajectory: Vec<FlowRecord> },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
