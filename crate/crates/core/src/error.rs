use thiserror::Error;

/// Errors raised across slot generation, record handling, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty allocation")]
    EmptyAllocation,

    #[error("unsupported modulation order {0}")]
    UnsupportedOrder(u32),

    #[error("bit count {bits} is not a multiple of modulation order {order}")]
    BitLength { bits: usize, order: u32 },

    #[error("non-finite IQ sample at symbol {symbol}, subcarrier {subcarrier}")]
    NonFiniteIq { symbol: usize, subcarrier: usize },

    #[error("invalid transport block size {0}")]
    InvalidTbSize(i64),

    #[error("invalid code block count {0}: a scheduled slot carries at least one")]
    InvalidCbCount(i64),

    #[error("log streams do not overlap in time")]
    DisjointLogs,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("shape mismatch in {tensor}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("normalization std for scalar {index} must be positive, got {value}")]
    BadNormalization { index: usize, value: f32 },

    #[error("non-finite activation after layer {0}")]
    NonFiniteActivation(&'static str),

    #[error("allocation of {0} bytes failed")]
    Alloc(usize),

    #[error("writer already finalized")]
    Finalized,

    #[error("no samples")]
    NoSamples,

    #[error("empty confusion matrix")]
    EmptyConfusion,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
