use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Input problems (`InvalidParams`, `Domain`, `Input`) are separated from
/// numerical failures so front ends can map them to different exit codes.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("Riccati solution left the domain at t = {at} (horizon {horizon})")]
    Explosion { at: f64, horizon: f64 },
    #[error("damping {epsilon} outside the admissible strip (1 + epsilon must be below {bound})")]
    Strip { epsilon: f64, bound: f64 },
    #[error("convexity not finite at this horizon: {0}")]
    NotFinite(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
}

impl Error {
    /// True when the error stems from user input rather than numerics.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_) | Error::Domain(_) | Error::Input(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
