use thiserror::Error;

/// Errors surfaced by model construction, solvers and analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mass matrix is singular at r = {r}")]
    SingularMass { r: f64 },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("regression input is degenerate: {0}")]
    DegenerateFit(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
