//! Crate-wide error type.

use thiserror::Error;

use crate::optimizer::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 1")]
    InvalidDimension,

    #[error("smoothing radius must be positive, got {0}")]
    InvalidMu(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("direction is not a unit vector (norm = {norm})")]
    NonUnitDirection { norm: f64 },

    /// Oracle failure wrapped with the query point that triggered it.
    #[error("oracle query at {point:?} failed: {source}")]
    OracleQuery {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("negative-cost cycle in perceived costs for class {class}")]
    NegativeCycle { class: usize },

    #[error("equilibrium solver stopped after {iterations} iterations (duality gap {gap:.3e})")]
    EquilibriumNotConverged { iterations: usize, gap: f64 },

    #[error("scalar solver bracket failure: {0}")]
    BracketFailure(String),

    #[error("instance generation failed: {0}")]
    GenerationFailure(String),

    /// Non-finite objective or iterate; the prefix holds everything
    /// recorded before the abort.
    #[error("run diverged at iteration {at}: {reason}")]
    Diverged {
        at: usize,
        reason: String,
        prefix: Box<Trajectory>,
    },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach the failing query point unless one is already attached.
    pub(crate) fn at_query(self, x: &[f64]) -> Error {
        match self {
            e @ Error::OracleQuery { .. } => e,
            other => Error::OracleQuery {
                point: x.to_vec(),
                source: Box::new(other),
            },
        }
    }
}
