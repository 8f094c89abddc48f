use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("renewal solution diverged at t = {time}: |H| = {value} exceeds {bound}")]
    Diverged { time: f64, value: f64, bound: f64 },

    #[error("ordering violated: {0}")]
    OrderViolation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than by a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParams(_) | Error::Usage(_))
    }
}
