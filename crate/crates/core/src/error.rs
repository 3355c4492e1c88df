use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("degenerate vector: cosine similarity is undefined at zero norm")]
    DegenerateVector,

    #[error("non-finite component at index {index}")]
    NonFinite { index: usize },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("annotation {annotation_id} refers to unknown image {image_id}")]
    DanglingImageId { annotation_id: u64, image_id: u64 },

    #[error("{path}: line {line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot resolve image {0:?}")]
    UnresolvableImage(String),

    #[error("caption decode error: {0}")]
    Decode(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("caption has {tokens} tokens, limit is {limit}")]
    OverTokenLimit { tokens: usize, limit: usize },

    #[error("authentication failed (status {status})")]
    Auth { status: u16 },

    #[error("transport error after {attempts} attempt(s){}: {message}", status.map(|s| format!(", last status {s}")).unwrap_or_default())]
    Transport {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },

    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("unsupported run file schema version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("runs cover different images; only in first: {only_first:?}, only in second: {only_second:?}")]
    ImageSetMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },

    #[error(
        "dataset needs at least 2 entries with references to draw an incorrect caption, found {0}"
    )]
    DatasetTooSmall(usize),

    #[error("{failed} of {total} records failed, above the {ceiling} failure ceiling")]
    FailureCeiling {
        failed: usize,
        total: usize,
        ceiling: f64,
    },

    #[error("{0} is not configured")]
    MissingProvider(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
