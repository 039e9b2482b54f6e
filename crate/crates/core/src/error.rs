use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the library.
///
/// Variants are grouped so a front end can map them onto distinct exit codes:
/// configuration problems, bad or inconsistent data, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation")]
    DegenerateRotation,

    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error("invalid contrast threshold: {0}")]
    InvalidContrastThreshold(f64),

    #[error("empty binning")]
    EmptyBinning,

    #[error("frame shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("event integration overflow; reduce Θ or check bins (Θ·C = {0})")]
    EventOverflow(f64),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command-line front end.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidContrastThreshold(_) => {
                ErrorKind::Config
            }
            Error::EventOverflow(_) | Error::Numerical(_) | Error::DegenerateRotation => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}
