use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("row {row} is not normalized: logsumexp = {logsumexp}")]
    Normalization { row: usize, logsumexp: f64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no speaker markers found in document")]
    NoSpeakerMarkers,

    #[error("embedding dimension mismatch: {left} vs {right}")]
    Dim { left: usize, right: usize },

    #[error("missing embedding for span start={start} len={len}")]
    MissingEmbedding { start: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no accepting path through the decoding graph")]
    NoPath,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("hypothesis token {index} has no frame timing")]
    MissingTiming { index: usize },

    #[error("reference is empty")]
    EmptyRef,

    #[error("infeasible split: {0}")]
    Infeasible(String),

    #[error("sentence universes differ: {0}")]
    UniverseMismatch(String),

    #[error("timestamps out of order at index {index}")]
    Order { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with a location such as a document id.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
