use std::path::PathBuf;

use thiserror::Error;

/// Failures while decoding a feature file or model container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found:?} (this build reads {supported:?})")]
    UnsupportedVersion { supported: String, found: String },
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: u64 },
    #[error("dimensions {h}x{w}x{d} exceed the element limit {limit}")]
    DimensionOverflow { h: u32, w: u32, d: u32, limit: u64 },
    #[error("zero dimension in header ({h}x{w}x{d})")]
    ZeroDimension { h: u32, w: u32, d: u32 },
    #[error("non-finite value at element {index}")]
    NonFiniteValue { index: usize },
    #[error("malformed container header: {0}")]
    Header(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("need at least {required} samples, got {found}")]
    NotEnoughSamples { required: usize, found: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("item {0:?} has no label")]
    MissingLabel(String),
    #[error("dataset manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::NonPositiveVariance(_) => ErrorKind::Numeric,
            Error::File { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub fn at(self, path: impl Into<PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
