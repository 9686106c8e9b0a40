//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrandError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear solver diverged after {iters} iterations (residual {residual:.3e}, tol {tol:.3e})")]
    SolverDiverged { iters: usize, residual: f64, tol: f64 },

    #[error("corrector did not converge after {iters} iterations (last delta {delta:.3e})")]
    CorrectorStalled { iters: usize, delta: f64 },

    #[error("step size underflow at t={t:.6e} (tau={tau:.3e}); system too stiff for requested tolerances")]
    StepSizeUnderflow { t: f64, tau: f64 },

    #[error("trajectory diverged at t={t:.6e} (amplitude {amplitude:.3e})")]
    TrajectoryDiverged { t: f64, amplitude: f64 },

    #[error("dense solve requested for n={n} above limit {limit} and fallback disabled")]
    DenseLimitExceeded { n: usize, limit: usize },

    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    TrainingDiverged { epoch: usize, what: String },

    #[error("malformed data in {path} line {line}: {msg}")]
    DataFormat { path: String, line: usize, msg: String },

    #[error("dataset invariant violated: {0}")]
    DataInvariant(String),

    #[error("generator failed: {0}")]
    Generator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GrandError>;
