use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("x = {x} lies outside the open domain ({l1}, {l2})")]
    OutOfDomain { x: f64, l1: f64, l2: f64 },

    #[error("two particles share the x-coordinate {x}")]
    CoincidentX { x: f64 },

    #[error("kernel evaluated at coincident points (dx = {dx}, dy = {dy})")]
    SingularKernel { dx: f64, dy: f64 },

    #[error("series kernel requires a non-empty mode list")]
    EmptyModeList,

    #[error("series kernel requires dx > 0, got {0}")]
    NonPositiveDx(f64),

    #[error("improved energy bound requires a G+ crossing event")]
    NotGPlus,

    #[error("quadrature oracle supports at most 3 particles, got {0}")]
    TooManyParticles(usize),

    #[error("quadrature needs {needed} nodes, budget is {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("configuration has {got} particles, accumulator expects {expected}")]
    DomainMismatch { expected: usize, got: usize },

    #[error("accumulator schemas differ: {0}")]
    SchemaMismatch(String),

    #[error("insufficient samples: {have} available, {need} required")]
    InsufficientSamples { have: f64, need: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
