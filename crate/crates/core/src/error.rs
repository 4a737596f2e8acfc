use thiserror::Error;

/// Errors produced by the engine, the graph runtime and the container codecs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} at index {index} does not fit in {bits} bits")]
    Range { index: usize, value: u32, bits: u8 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("accumulator overflow: {0}")]
    Overflow(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("mode mismatch: expected mode {expected}, found mode {found}")]
    Mode { expected: u8, found: u8 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("graph contains a cycle through nodes: {}", .0.join(", "))]
    Cycle(Vec<String>),

    #[error("node `{node}`: {message}")]
    Node { node: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn node(node: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Node {
            node: node.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
