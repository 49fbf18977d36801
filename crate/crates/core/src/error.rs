use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate chunk id `{0}`")]
    DuplicateChunkId(String),

    #[error("chunk `{chunk_id}` references unknown KB `{kb}`")]
    UnknownKb { chunk_id: String, kb: String },

    #[error("document `{doc_id}` appears in KBs `{first}` and `{second}`")]
    DocSpansKbs { doc_id: String, first: String, second: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("invalid gold label for query `{query_id}`: {message}")]
    InvalidGold { query_id: String, message: String },

    #[error("KB `{0}` has no chunks")]
    EmptyKb(String),

    #[error("no index for KB `{0}`")]
    MissingIndex(String),

    #[error("cannot normalize an empty score list")]
    EmptyList,

    #[error("probe result is empty")]
    EmptyProbe,

    #[error("ranked list is empty")]
    EmptyRankedList,

    #[error("brute-force packing supports at most {max} candidates, got {got}")]
    TooLarge { got: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing key `{0}`")]
    KeyMismatch(String),

    #[error("query `{0}` has no gold label")]
    GoldMissing(String),

    #[error("missing run output: {0}")]
    MissingTraces(String),

    #[error("artifacts unusable: {0}")]
    StaleArtifacts(String),

    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateChunkId(_) => "DuplicateChunkId",
            Error::UnknownKb { .. } => "UnknownKb",
            Error::DocSpansKbs { .. } => "DocSpansKbs",
            Error::Schema { .. } => "SchemaError",
            Error::InvalidGold { .. } => "InvalidGold",
            Error::EmptyKb(_) => "EmptyKb",
            Error::MissingIndex(_) => "MissingIndex",
            Error::EmptyList => "EmptyList",
            Error::EmptyProbe => "EmptyProbe",
            Error::EmptyRankedList => "EmptyRankedList",
            Error::TooLarge { .. } => "TooLarge",
            Error::Config(_) => "ConfigError",
            Error::KeyMismatch(_) => "KeyMismatch",
            Error::GoldMissing(_) => "GoldMissing",
            Error::MissingTraces(_) => "MissingTraces",
            Error::StaleArtifacts(_) => "StaleArtifacts",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
