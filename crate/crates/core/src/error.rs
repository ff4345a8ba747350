use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Field or force evaluated at (or too close to) a point source.
    #[error("singular evaluation: {0}")]
    Singular(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Document failed validation; one entry per problem found.
    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("no root in bracket [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("solver did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    #[error(transparent)]
    Solve(Box<crate::statics::SolveFailure>),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("field estimation failed: {0}")]
    Estimation(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
