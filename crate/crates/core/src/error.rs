use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is not positive definite after regularization (pivot {pivot} of {dim})")]
    NotPositiveDefinite { pivot: usize, dim: usize },

    #[error("operation requires a Gaussian disturbance")]
    NonGaussian,

    #[error("disturbance model provides no characteristic function")]
    NoCharacteristicFunction,

    #[error("input sequence is infeasible: {0}")]
    InfeasibleInput(String),

    #[error(
        "grid of {node_values} node-values (~{megabytes} MB) exceeds the limit of {limit}; \
         increase the spacings or shrink the safe set"
    )]
    GridTooLarge {
        node_values: u128,
        limit: u128,
        megabytes: u128,
    },

    #[error("dynamic programming supports state dimension n <= 3, got n = {0}")]
    DpDimension(usize),

    #[error("point lies inside the safe set but outside the value grid")]
    OutsideGrid,

    #[error("problem file: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by malformed input documents rather than numerics.
    pub fn is_schema(&self) -> bool {
        matches!(self, Error::Schema(_) | Error::Dimension(_) | Error::InvalidArgument(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}
