use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the workspace")]
    OutsideWorkspace { point: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("information map is not normalized (integral {integral})")]
    Unnormalized { integral: f64 },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("cannot localize detection: {0}")]
    Localization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
