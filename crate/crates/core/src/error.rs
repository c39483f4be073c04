//! Error type shared by every layer of the toolkit.

use std::io;
use std::path::PathBuf;
use std::time::Duration;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A required environment variable is missing or malformed.
    #[error("initialization failed: {var}: {reason}")]
    Init { var: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("rank {rank} out of range for communicator of size {size}")]
    RankOutOfRange { rank: usize, size: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("receive from rank {src} with tag {tag} timed out after {waited:?}")]
    Timeout { src: usize, tag: u64, waited: Duration },

    #[error("malformed payload in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("payload decode error: {0}")]
    Decode(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid map literal {literal:?}: {reason}")]
    MapLiteral { literal: String, reason: String },

    #[error("rank {0} is not in the map's processor list")]
    NotInMap(usize),

    #[error("operands have different maps; redistribute explicitly first")]
    MapMismatch,

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A message of a redistribution failed; carries the transfer it belonged to.
    #[error("redistribution {sender}->{receiver} (block {block}) failed: {source}")]
    Redistribution {
        sender: usize,
        receiver: usize,
        block: String,
        #[source]
        source: Box<Error>,
    },

    #[error("launch failed: {0}")]
    Launch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0} is not implemented")]
    NotImplemented(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
