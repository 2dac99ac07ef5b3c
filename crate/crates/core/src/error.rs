use thiserror::Error;

use crate::st_kernels::TourTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NrstError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("potential diverged (V = {value}) at x = {x:?}")]
    DivergedPotential { x: Vec<f64>, value: f64 },

    #[error("slice sampler failed: {0}")]
    NumericalFailure(String),

    #[error("tour {tour} did not reach the atom within {max_steps} steps")]
    TourOverrun {
        tour: usize,
        max_steps: usize,
        partial: Box<TourTrace>,
    },

    #[error("no tour visited the top level")]
    NoTopVisits,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown model `{name}` (available: {available})")]
    UnknownModel { name: String, available: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for NrstError {
    fn from(e: std::io::Error) -> Self {
        NrstError::Io(e.to_string())
    }
}

impl From<csv::Error> for NrstError {
    fn from(e: csv::Error) -> Self {
        NrstError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for NrstError {
    fn from(e: serde_json::Error) -> Self {
        NrstError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NrstError>;

pub(crate) fn invalid(msg: impl Into<String>) -> NrstError {
    NrstError::InvalidArgument(msg.into())
}
