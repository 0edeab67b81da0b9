use std::path::PathBuf;

use thiserror::Error;

use crate::nls::FitError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("line not found: {0}")]
    LineNotFound(String),

    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),

    #[error("superradiant inconsistency: total lifetime {tau_tot_ns} ns exceeds radiative lifetime {tau_rad_ns} ns")]
    Superradiant { tau_rad_ns: f64, tau_tot_ns: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error(transparent)]
    Fit(#[from] FitError),
}

impl Error {
    /// True for failures of a numerical fit, as opposed to bad input.
    pub fn is_fit_failure(&self) -> bool {
        matches!(self, Error::Fit(_) | Error::ModelInconsistency(_))
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
