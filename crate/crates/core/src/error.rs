use thiserror::Error;

use crate::kg::{Side, TripleFile};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed line {line} in {file} file: expected 3 tab-separated fields")]
    MalformedLine { file: TripleFile, line: usize },

    #[error("malformed reference alignment line {0}: expected 2 tab-separated fields")]
    MalformedReferenceLine(usize),

    #[error("unknown {side} entity `{entity}`")]
    UnknownEntity { side: Side, entity: String },

    #[error("no seed mappings available for embedding training")]
    NoSeeds,

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("reference alignment is empty")]
    EmptyReference,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
