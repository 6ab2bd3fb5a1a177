use thiserror::Error;

/// Errors raised across the optimization toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design space: {0}")]
    InvalidSpace(String),
    #[error("invalid grid resolution: {0}")]
    InvalidResolution(String),
    #[error("point outside design bounds: {0}")]
    BoundsViolation(String),
    #[error("invalid objective weights: {0}")]
    InvalidWeights(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("invalid sigma {0}")]
    InvalidSigma(f64),
    #[error("p-value {0} outside [0, 1]")]
    InvalidP(f64),
    #[error("invalid key geometry: {0}")]
    InvalidKey(String),
    #[error("invalid sentence: {0}")]
    InvalidSentence(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training failure: {0}")]
    Training(String),
    #[error("episode aborted: {0}")]
    EpisodeAborted(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}
