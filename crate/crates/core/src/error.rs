use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("region {region} does not fit inside a {width}x{height} frame")]
    RegionOutOfBounds {
        region: String,
        width: usize,
        height: usize,
    },

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("binning: {0}")]
    Binning(String),

    #[error("format error in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config line {line}: {reason}")]
    ConfigLine { line: usize, reason: String },

    #[error("search window: {0}")]
    Window(String),

    #[error("no interior minimum: {0}")]
    Minimum(String),

    #[error("estimator: {0}")]
    Estimator(String),

    #[error("imaging: {0}")]
    Imaging(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path:?}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an I/O error with the path it concerns.
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::File { path, source }
    }

    /// Short machine-parsable category, used for CLI exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidFrame(_) => "frame",
            Error::RegionOutOfBounds { .. } | Error::DegenerateRegion(_) => "region",
            Error::Binning(_) => "binning",
            Error::Format { .. } => "format",
            Error::Config(_) | Error::ConfigLine { .. } => "config",
            Error::Window(_) => "window",
            Error::Minimum(_) => "minimum",
            Error::Estimator(_) => "estimator",
            Error::Imaging(_) => "imaging",
            Error::Io(_) | Error::File { .. } | Error::Csv(_) => "io",
        }
    }
}
