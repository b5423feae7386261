use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("matrix is not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("infeasible sparsity pattern: {0}")]
    InfeasiblePattern(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("enumeration guard exceeded: {count} patterns (limit {limit})")]
    GuardExceeded { count: u128, limit: u128 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlrError>;
