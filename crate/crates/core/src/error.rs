use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{origin}: parse error: {message}")]
    Parse { origin: String, message: String },

    #[error("item bank invariant violated: {0}")]
    Invariant(String),

    #[error("missing responses for item ids {0:?}")]
    MissingItems(Vec<u32>),

    #[error("unknown item id {0}")]
    UnknownItem(u32),

    #[error("named persona requires a non-empty name")]
    MissingName,

    #[error("malformed template for item {item_id}: {reason}")]
    MalformedTemplate { item_id: u32, reason: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("backend rejected request: {0}")]
    Rejected(String),

    #[error("protocol version mismatch: expected {expected}, backend speaks {found}")]
    ProtocolMismatch { expected: String, found: String },

    #[error("backend returned a non-finite score")]
    NonFiniteScore,

    #[error("malformed backend response: {0}")]
    BadResponse(String),

    #[error("item {item_id} failed: {source}")]
    ItemFailed {
        item_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("insufficient samples for {what}: need at least {needed}, have {have}")]
    InsufficientSamples { what: String, needed: usize, have: usize },

    #[error("record does not match base: {0}")]
    BaseMismatch(String),

    #[error("record has no item context")]
    NotItemContext,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("vocabulary is empty after applying the n-gram spec")]
    EmptyVocabulary,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("solver did not converge after {iterations} iterations (max update {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures worth retrying against a remote backend.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    /// True when the failure came from the scoring backend rather than local input.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Transport(_)
            | Error::Rejected(_)
            | Error::ProtocolMismatch { .. }
            | Error::NonFiniteScore
            | Error::BadResponse(_) => true,
            Error::ItemFailed { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
