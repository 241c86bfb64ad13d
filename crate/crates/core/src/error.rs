use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network architecture: {0}")]
    InvalidArch(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature grid misconfigured: {0}")]
    Quadrature(String),

    #[error("{what} did not terminate within {limit} iterations")]
    MaxIterations { what: &'static str, limit: usize },

    #[error("could not find a finite-potential initial state after {0} attempts")]
    Initialization(usize),

    #[error("acceptance rate {rate:.3e} below floor {floor:.3e}")]
    AcceptanceFloor { rate: f64, floor: f64 },

    #[error("no true-cost oracle for task {task} with distance {distance}")]
    NoOracle { task: String, distance: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}
