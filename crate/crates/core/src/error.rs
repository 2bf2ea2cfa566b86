use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures reading a cloud file. Each variant is a distinct condition so
/// callers can tell a foreign file from a damaged one.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CloudFormatError {
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported cloud format version {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mask selects no pixels")]
    DegenerateMask,
    #[error("value out of range: {0}")]
    Range(String),
    #[error("degenerate point set: {0}")]
    RankDeficient(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("enhancer context carries no camera")]
    MissingCamera,
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cloud format: {0}")]
    CloudFormat(#[from] CloudFormatError),
    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("image: {0}")]
    Image(String),
    #[error("io error on {path}: {source}")]
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

    /// Short machine-readable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::DegenerateMask => "mask",
            Error::Range(_) => "range",
            Error::RankDeficient(_) => "landmarks",
            Error::InvalidPose(_) => "pose",
            Error::MissingCamera => "oracle",
            Error::Oracle(_) => "oracle",
            Error::Config(_) => "config",
            Error::CloudFormat(_) => "format",
            Error::Parse { .. } => "parse",
            Error::Image(_) => "image",
            Error::Io { .. } => "file",
        }
    }
}
