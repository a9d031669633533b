use thiserror::Error;

/// Errors produced while loading problems or evaluating the model and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that do not line up (rows, columns, vector lengths).
    #[error("structural error: {0}")]
    Structure(String),

    /// A value outside the domain of an operation (negative variance, bad hyperparameter).
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization failed where the model guarantees it should not.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative method ran out of iterations or step halvings.
    #[error("convergence failure after {iterations} iterations: {message}")]
    Convergence { iterations: usize, message: String },

    /// The inner Newton solve stopped short of its residual tolerance.
    #[error("value function solve did not converge: ||G|| = {residual:e} after {iterations} Newton steps")]
    InnerConvergence {
        iterations: usize,
        residual: f64,
        best: Box<crate::inner::KktState>,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
