use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the runtime can surface.
///
/// Errors are `Clone` because a failed operation's error is stored in its
/// work handle and may be observed by both `wait` and `synchronize`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid request: {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("invalid root {root} for world size {world_size}")]
    InvalidRoot { root: usize, world_size: usize },

    #[error("invalid destination rank {rank} (self {me}, world size {world_size})")]
    InvalidDestination { rank: usize, me: usize, world_size: usize },

    #[error("collective order mismatch: {0}")]
    OrderMismatch(String),

    #[error("frame length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("peer {0} disconnected")]
    PeerDisconnected(usize),

    #[error("malformed frame: {0}")]
    Serialization(String),

    #[error("operation timed out after {0:?}")]
    Timeout(Duration),

    #[error("bootstrap timed out: {0}")]
    BootstrapTimeout(String),

    #[error("address in use: {0}")]
    AddressInUse(String),

    #[error("backend `{0}` registered twice")]
    DuplicateBackend(String),

    #[error("unknown backend `{0}`")]
    UnknownBackend(String),

    #[error("unknown or unusable transport `{0}`")]
    UnknownTransport(String),

    #[error("backend `{0}` is finalized")]
    BackendFinalized(String),

    #[error("backend `{backend}` still had {pending} pending operations after {timeout:?}")]
    PendingAfterTimeout {
        backend: String,
        pending: u64,
        timeout: Duration,
    },

    #[error("backend `{backend}` does not implement {op}")]
    Unsupported { backend: String, op: String },

    #[error("no registered backend can serve {0}")]
    UnroutableRequest(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("tuning table thresholds not strictly increasing: {0}")]
    Monotonicity(String),

    #[error("codec mismatch: {0}")]
    CodecMismatch(String),

    #[error("no benchmark samples")]
    EmptySamples,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{0} errors: {1:?}")]
    Multiple(usize, Vec<Error>),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short stable name of the variant, used in logs and the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "ValidationError",
            Error::InvalidRoot { .. } => "InvalidRoot",
            Error::InvalidDestination { .. } => "InvalidDestination",
            Error::OrderMismatch(_) => "OrderMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::PeerDisconnected(_) => "PeerDisconnected",
            Error::Serialization(_) => "SerializationError",
            Error::Timeout(_) => "Timeout",
            Error::BootstrapTimeout(_) => "BootstrapTimeout",
            Error::AddressInUse(_) => "AddressInUse",
            Error::DuplicateBackend(_) => "DuplicateBackend",
            Error::UnknownBackend(_) => "UnknownBackend",
            Error::UnknownTransport(_) => "UnknownTransport",
            Error::BackendFinalized(_) => "BackendFinalized",
            Error::PendingAfterTimeout { .. } => "PendingAfterTimeout",
            Error::Unsupported { .. } => "SkippedCombination",
            Error::UnroutableRequest(_) => "UnroutableRequest",
            Error::Parse(_) => "ParseError",
            Error::Monotonicity(_) => "MonotonicityError",
            Error::CodecMismatch(_) => "CodecMismatch",
            Error::EmptySamples => "EmptySamples",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Multiple(..) => "Multiple",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
