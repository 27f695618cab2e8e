use thiserror::Error;

/// Errors produced across the surrogate-building and calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinate {value} outside [{lo}, {hi}] in dimension {dim}")]
    OutOfDomain { dim: usize, value: f64, lo: f64, hi: f64 },

    #[error("evaluator returned non-finite value {value} at multi-index {index:?}")]
    BuildFailure { index: Vec<usize>, value: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("completion failed: {0}")]
    CompletionFailure(String),

    #[error("simulation failed: {0}")]
    SimulationFailure(String),

    #[error("price {price} has no implied volatility; admissible band is ({lower}, {upper})")]
    NoSolution { price: f64, lower: f64, upper: f64 },

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BuildFailure { .. }
                | Error::CompletionFailure(_)
                | Error::SimulationFailure(_)
                | Error::NoSolution { .. }
                | Error::SolverFailure(_)
                | Error::Undefined(_)
        )
    }
}
