use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {source}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("line {line}: invalid record: {reason}")]
    InvalidRecord { line: usize, reason: String },

    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("embedding dimension must be positive")]
    ZeroDim,

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("invalid embedding file: {0}")]
    InvalidEmbeddingFile(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("line {line}: {reason}")]
    TableFormat { line: usize, reason: String },

    #[error("conflicting mappings for `{surface}`: `{first}` vs `{second}`")]
    LexiconConflict {
        surface: String,
        first: String,
        second: String,
    },

    #[error("canonical `{canonical}` is itself mapped to `{target}`")]
    NonClosedMapping { canonical: String, target: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("cosine similarity undefined for zero-norm vector")]
    ZeroNorm,

    #[error("no embedding for id `{0}`")]
    MissingEmbedding(String),

    #[error("pair for `{0}` has no similarity and no embeddings were supplied")]
    MissingSimilarity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("code {index} out of range at level {level} (codebook has {entries} entries)")]
    CodeOutOfRange {
        level: usize,
        index: usize,
        entries: usize,
    },

    #[error("dimension {dim} is not divisible into {chunks} chunks")]
    IndivisibleDim { dim: usize, chunks: usize },

    #[error("need at least {needed} samples, got {count}")]
    TooFewSamples { count: usize, needed: usize },

    #[error("iteration {iteration} outside schedule of {total} iterations")]
    IterationOutOfRange { iteration: u64, total: u64 },

    #[error("negative attention weight {value} at index {index}")]
    NegativeAttention { index: usize, value: f32 },
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
