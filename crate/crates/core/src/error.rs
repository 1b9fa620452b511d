use crate::sbp::SbpError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldlineError {
    #[error(transparent)]
    Sbp(#[from] SbpError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("solver did not converge after {iterations} iterations (best gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("linear system is singular even at maximum damping")]
    SingularSystem,
    #[error("free-case charges require the free potential, got {0}")]
    NotFreePotential(String),
    #[error("integrator step failure at gamma = {at}: {reason}")]
    StepFailure { at: f64, reason: String },
    #[error("step size collapsed at {at} (stiffness suspected)")]
    StiffnessSuspected { at: f64 },
    #[error("velocity reached the speed of light at t = {at}")]
    SuperluminalVelocity { at: f64 },
    #[error("exponent fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, WorldlineError>;
