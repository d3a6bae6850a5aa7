use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a PCDT file")]
    BadMagic,
    #[error("unsupported PCDT version {0}")]
    BadVersion(u8),
    #[error("unsupported PCDT dtype {0}")]
    BadDtype(u8),
    #[error("bad payload length: expected {expected} bytes, found {found}")]
    BadPayload { expected: usize, found: usize },
    #[error("dimension overflow")]
    DimensionOverflow,
    #[error("unsupported PNM variant {0}")]
    UnsupportedPnm(String),
    #[error("malformed PNM header: {0}")]
    MalformedPnm(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("severity out of range: {0}")]
    SeverityOutOfRange(u8),
    #[error("unknown corruption family: {0}")]
    UnknownFamily(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("bad key=value file {path}: {msg}")]
    KeyValue { path: PathBuf, msg: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
