use thiserror::Error;

/// Errors surfaced by the solver library.
///
/// Contract violations (shape mismatches, out-of-range indices) panic
/// instead; everything data- or convergence-dependent comes through here.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("root finder failed: {0}")]
    RootFind(String),

    #[error("linear solver breakdown during {stage} (residual {residual:.3e})")]
    SolverBreakdown { stage: String, residual: f64 },

    #[error("iteration diverged: {0}")]
    Diverged(String),
}
