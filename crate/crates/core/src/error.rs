use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("separation violation: {0}")]
    SeparationViolation(String),

    #[error("region `{0}` captures no grid node")]
    EmptyRegion(&'static str),

    #[error("coefficient is not positive: p = {value:e} at node {node}")]
    NonPositiveCoefficient { node: usize, value: f64 },

    #[error("mu = {mu} outside admissible range ({reason})")]
    MuOutOfRange { mu: f64, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("source is nonzero outside the control region at node {node} (step {step})")]
    SourceOutsideOmega { step: usize, node: usize },

    #[error("inner solve failed at time step {step}: {detail}")]
    InnerSolveDivergence { step: usize, detail: String },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shift {shift} lies inside the spectrum (indefinite shifted operator)")]
    ShiftInsideSpectrum { shift: f64 },

    #[error("eps = {epsilon} is below the mesh size h = {h}")]
    ResolutionGuard { epsilon: f64, h: f64 },

    #[error("weight function validation failed at {} node(s): {summary}", nodes.len())]
    ValidationFailure { nodes: Vec<usize>, summary: String },

    #[error("t = {0} is a time endpoint; the weights are infinite there")]
    TimeEndpoint(f64),

    #[error("exp(-2 sigma) underflows on the whole space-time grid (s = {s}, lambda = {lambda})")]
    WeightOverflow { s: f64, lambda: f64 },

    #[error("observation energy underflows ({0:e}); restart required")]
    DegenerateDenominator(f64),

    #[error("conjugate gradient stalled after {iterations} iterations (residual {residual:e}); increase the penalization")]
    CgStall { iterations: usize, residual: f64 },

    #[error("the origin is not inside the control region")]
    OriginOutsideOmega,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
