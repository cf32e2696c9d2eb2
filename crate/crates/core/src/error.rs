use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integration failure at step {step}: non-finite state")]
    IntegrationFailure { step: usize },

    #[error("identifier diverged at step {step}")]
    IdentifierDivergence { step: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("riccati solver did not converge after {steps} steps (residual {residual:e})")]
    SolverNonConvergence { steps: usize, residual: f64 },

    #[error("rank condition not satisfied (y_min = {y_min:e})")]
    RankDeficient { y_min: f64 },

    #[error("history stack collection failed: rank condition unmet (y_min = {y_min:e})")]
    CollectionFailure { y_min: f64 },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
