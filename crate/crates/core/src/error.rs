use thiserror::Error;

/// Errors raised by the numerical kernels, synthesis, evaluation and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    BadShape(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergent {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("pair is not stabilizable (closed-loop spectral radius {spectral_radius})")]
    NotStabilizable { spectral_radius: f64 },

    #[error("closed loop is not stable (spectral radius {spectral_radius})")]
    UnstableClosedLoop { spectral_radius: f64 },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("risk budget must be positive, got {budget}")]
    InfeasibleBudget { budget: f64 },

    #[error("no sampler registered for noise family {0}")]
    UnsupportedFamily(String),

    #[error("state diverged at step {step} (norm {norm:e})")]
    NonFiniteState { step: usize, norm: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed scenario: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
