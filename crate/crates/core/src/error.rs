use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {context}: expected {expected}, found {found}")]
    Dimension { context: &'static str, expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema violation at row {row}, field `{field}`: {message}")]
    Schema { row: usize, field: String, message: String },

    #[error("market {market_id}: {message}")]
    Invariant { market_id: String, message: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { what: &'static str, iterations: usize, residual: f64, last: Vec<f64> },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("rank-deficient {what}: rank {rank} < {required}")]
    RankDeficient { what: &'static str, rank: usize, required: usize },

    #[error("collinear design; offending columns: {}", .columns.join(", "))]
    Collinear { columns: Vec<String> },

    #[error("no sign change on [{lo}, {hi}] (residuals {r_lo:.3e}, {r_hi:.3e})")]
    NoBracket { lo: f64, hi: f64, r_lo: f64, r_hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{failed} of {total} draws failed, above the abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub fn invariant(market_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant { market_id: market_id.into(), message: message.into() }
    }

    pub fn dimension(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension { context, expected, found }
    }
}
