use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("envelope solver failed at {context}: {message}")]
    Solver { context: String, message: String },

    #[error("missing confidence multiplier for stage {stage}, state {x}, confidence {y}")]
    MissingMultiplier { stage: usize, x: f64, y: f64 },

    #[error("missing Monte Carlo estimate at x = {x}, alpha = {alpha}")]
    MissingEstimate { x: f64, alpha: f64 },

    #[error("confidence level {0} is not a grid level")]
    NotAGridLevel(f64),

    #[error("mismatched safe sets: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
