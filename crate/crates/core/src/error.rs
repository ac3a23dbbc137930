use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: epsilon = {epsilon} is invalid ({reason})")]
    InvalidEpsilon { epsilon: f64, reason: &'static str },

    #[error("geometry: cannot place {count} inclusions for epsilon = {epsilon} ({reason})")]
    PackingInfeasible {
        epsilon: f64,
        count: usize,
        reason: String,
    },

    #[error("geometry: invalid domain: {0}")]
    InvalidDomain(String),

    #[error("geometry: invalid density: {0}")]
    InvalidDensity(String),

    #[error("discretization: spacing h = {h} does not divide side {side} of axis {axis}")]
    IncommensurateSpacing { h: f64, side: f64, axis: usize },

    #[error("discretization: inclusion {index} contains no cell center")]
    UnresolvedInclusion { index: usize },

    #[error("discretization: coefficient {value} at cell {cell} must be positive")]
    NonpositiveCoefficient { cell: usize, value: f64 },

    #[error("solver: no convergence after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("diagnostics: fields have {left} and {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invariant violated in {module}: {message}")]
    Invariant {
        module: &'static str,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
