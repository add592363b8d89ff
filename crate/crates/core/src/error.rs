use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    /// `row` is the 1-based data row (header excluded).
    #[error("validation error in row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("parse error in row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("duplicate column name `{0}` after encoding")]
    DuplicateColumn(String),

    #[error("estimand undefined: {0}")]
    EstimandUndefined(String),

    #[error("finite-difference oracle: {0}")]
    Oracle(String),

    #[error("solver did not converge after {iterations} iterations (max |U/n| = {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("leverage error: {0}")]
    Leverage(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("invalid hypothesis: {0}")]
    Hypothesis(String),

    #[error("bootstrap unstable: {failed} of {requested} replicates failed")]
    BootstrapUnstable { failed: usize, requested: usize },

    #[error("kernel of degree {degree} needs at least {degree} observations, got {n}")]
    Arity { degree: usize, n: usize },

    #[error("generator error: {0}")]
    Generator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input). The CLI maps these to a
    /// distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EstimandUndefined(_)
                | Error::Oracle(_)
                | Error::NonConvergence { .. }
                | Error::Leverage(_)
                | Error::Conditioning(_)
                | Error::BootstrapUnstable { .. }
        )
    }
}
