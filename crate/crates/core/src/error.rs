use std::io;

/// Errors raised anywhere in the estimation and optimization pipeline.
///
/// Variants are grouped by class so that front ends can map them onto
/// stable exit codes (see [`Error::class`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data integrity error: {0}")]
    Integrity(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("perfect separation in treatment model: {0}; consider dropping or coarsening covariates")]
    Separation(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Integrity,
    Numerical,
    Backend,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Config,
            Error::Integrity(_) | Error::Validation(_) | Error::Csv(_) => ErrorClass::Integrity,
            Error::Numerical(_) | Error::Separation(_) => ErrorClass::Numerical,
            Error::BackendUnavailable(_) => ErrorClass::Backend,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
