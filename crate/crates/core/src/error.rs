use thiserror::Error;

/// Errors produced by the solver suite.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("operator is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A solver produced a non-finite value; `lagrangians` is the trajectory
    /// of the augmented Lagrangian up to that point.
    #[error("non-finite iterate at outer iteration {iteration}")]
    NonFinite {
        iteration: usize,
        lagrangians: Vec<f64>,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("unknown model `{0}` (expected eq16, eq17 or an existing model file)")]
    UnknownModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
