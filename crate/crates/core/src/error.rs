use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("noise mode out of range: {0}")]
    NoiseMode(String),
    #[error("linear factor {factor:e} at eigenvalue {lambda:e} is below the 1e-8 guard (denominator)")]
    Denominator { lambda: f64, factor: f64 },
    #[error("non-finite state at step {step} (t = {t})")]
    NonFinite { step: u64, t: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("path {path}: {source}")]
    Path {
        path: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{context} ({path}): {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad snapshot: {0}")]
    Snapshot(String),
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("run stopped early ({reason}) at t = {t}")]
    Stopped { reason: String, t: f64 },
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
}

impl Error {
    /// Whether the error stems from the run configuration rather than the run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Config { .. }
            | Error::InvalidParameter { .. }
            | Error::InvalidGrid(_)
            | Error::NoiseMode(_)
            | Error::Snapshot(_) => true,
            Error::Path { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
