use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate trajectory: path has zero length")]
    ZeroLengthPath,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("need at least {needed} data points, got {got}")]
    NotEnoughData { needed: usize, got: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("planning failed from ({x:.3}, {y:.3}) after {iterations} iterations")]
    PlanningFailed { x: f64, y: f64, iterations: usize },

    #[error("planning failed for grid point {index}: {source}")]
    BankPointFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("every grid point has already been demonstrated")]
    Exhausted,

    #[error("no demonstration in bank for grid point {0} (source {1})")]
    MissingDemonstration(usize, String),

    #[error("unknown guidance rule `{0}`")]
    UnknownRule(String),

    #[error("missing result group {0}")]
    MissingGroup(String),

    #[error("model has not been fitted")]
    Unfitted,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
