use thiserror::Error;

/// Errors produced by the numerical and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pair (A,B) not controllable")]
    NotControllable,

    #[error("uncontracted dynamics: matrix is not Hurwitz (max Re(eig) = {max_real_part:e})")]
    NotHurwitz { max_real_part: f64 },

    #[error("exact predictor oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("ε outside Lyapunov feasibility: ε = {epsilon} ≥ {limit}")]
    LyapunovInfeasible { epsilon: f64, limit: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
