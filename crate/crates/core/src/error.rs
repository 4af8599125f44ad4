use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("truncated image data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image has {channels} channel(s), which cannot be written as {format}")]
    ChannelMismatch { channels: usize, format: &'static str },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inconsistent block grid: {0}")]
    InconsistentGrid(String),
    #[error("histogram map index {index} out of range for {len} samples")]
    MapIndexOutOfRange { index: usize, len: usize },

    #[error("transform: {0}")]
    Transform(String),
    #[error("selection: requested {requested} coefficients but only {available} available")]
    SelectionTooLarge { requested: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty population")]
    EmptyPopulation,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("unsupported RSA key size {0}")]
    UnsupportedKeySize(usize),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("payload corrupted")]
    PayloadCorrupted,
    #[error("not a stego payload: {0}")]
    NotAPayload(String),

    #[error("payload too large: {needed} bits needed, capacity {capacity} bits")]
    CapacityExceeded { needed: usize, capacity: usize },
    #[error("no payload found")]
    NoPayload,
    #[error("embedding failed: {0}")]
    EmbedFailed(String),

    #[error("shield failed: stop criterion not reached")]
    ShieldFailed,
}

pub type Result<T> = std::result::Result<T, Error>;
