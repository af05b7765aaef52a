use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("document {0} is empty")]
    EmptyDocument(String),

    #[error("no extractor configured for non-text input {0}")]
    NoExtractor(String),

    #[error("extractor failed on {path}: {message}")]
    Extractor { path: String, message: String },

    #[error("line {line}: expected {expected} dimensions, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("cannot split {n} items into {k} folds")]
    TooFewItems { n: usize, k: usize },

    #[error("class {class} has {count} members, fewer than {k} folds")]
    ClassTooSmall { class: usize, count: usize, k: usize },

    #[error("tag {tag} at position {position} is outside {{0, 1, 2}}")]
    InvalidTag { position: usize, tag: u8 },

    #[error("malformed model file: {0}")]
    BadModelFile(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("empty sentence")]
    EmptySentence,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
