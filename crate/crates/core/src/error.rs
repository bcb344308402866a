use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("iteration limit reached: {0}")]
    IterationLimit(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("index {index} is outside 0..={max}")]
    Index { index: usize, max: usize },

    #[error("no candidate keeps the implied measurement noise inside its box")]
    Infeasible,

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("full-information window of length {t} exceeds the cap of {cap}")]
    CapExceeded { t: usize, cap: usize },

    #[error("certificate rejected: {0}")]
    Certificate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
