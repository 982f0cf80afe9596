//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoxError {
    /// An argument was outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The data cannot support the requested operation (e.g. no events).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// An iterative solver failed to converge.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// A quadrature rule did not reach the requested accuracy.
    #[error("quadrature accuracy: {0}")]
    Accuracy(String),

    /// A matrix operation failed (singular or not positive definite).
    #[error("linear algebra: {0}")]
    LinearAlgebra(String),

    /// A precondition documented on the operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Too many replicate-level failures in a batch run.
    #[error("replicate failures: {failed} of {total}: first error: {first}")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoxError>;
