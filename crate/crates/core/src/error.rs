use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {0:?} lies outside the closed unit ball")]
    Domain([f64; 3]),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("geodesic did not reach the boundary within {max_steps} steps")]
    NonTermination { max_steps: usize },
    #[error("finite-difference stencil around {0:?} leaves the unit ball")]
    Stencil([f64; 3]),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iterative solver stopped at relative residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("model spec `{0}` is not recognized")]
    ModelSpec(String),
    #[error("field spec `{0}` is not recognized")]
    FieldSpec(String),
}

impl Error {
    /// Whether the failure is (or wraps) solver non-convergence.
    pub fn is_not_converged(&self) -> bool {
        match self {
            Error::NotConverged { .. } => true,
            Error::Step { source, .. } => source.is_not_converged(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
