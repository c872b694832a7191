use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("martensite fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("transformation direction undefined: {0}")]
    UndefinedDirection(&'static str),
    #[error("vanishing Schur denominator")]
    ZeroDenominator,
    #[error("local solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    LocalDivergence { iterations: usize, residual: f64 },
    #[error("step {step}: global iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    GlobalDivergence { step: usize, iterations: usize, residual: f64 },
    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<Error> },
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// True for failures raised while stepping the solution, as opposed to invalid
    /// input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Step { .. } | Error::GlobalDivergence { .. } | Error::LocalDivergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
