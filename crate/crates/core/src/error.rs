use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A network or layer was configured with incompatible shapes.
    #[error("configuration error in layer `{layer}`: {msg}")]
    Config { layer: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An API was used out of order, e.g. `backward` on a graph that never recorded.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss in {stage} at iteration {iteration}")]
    NonFiniteLoss { stage: String, iteration: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unrecognized format: {0}")]
    UnrecognizedFormat(String),

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed source: {0}")]
    MalformedSource(String),

    #[error("image decoding failed: {0}")]
    Image(String),

    #[error("label table: {0}")]
    LabelTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
