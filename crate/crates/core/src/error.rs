use std::path::PathBuf;

/// Errors produced anywhere in the codec pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("signal is empty")]
    EmptySignal,
    #[error("corpus has {available} wav files, {requested} requested")]
    NotEnoughFiles { available: usize, requested: usize },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("subpixel upsampling needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("k-means needs at least {needed} distinct values, found {found}")]
    TooFewDistinctValues { needed: usize, found: usize },
    #[error("symbol {symbol} out of range for {num_symbols}-symbol table")]
    SymbolOutOfRange { symbol: usize, num_symbols: usize },
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("non-finite loss in epoch {epoch}, minibatch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::CorruptFile { .. } => "corrupt_file",
            Error::Io(_) => "io",
            Error::EmptySignal => "empty_signal",
            Error::NotEnoughFiles { .. } => "not_enough_files",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::OddChannels(_) => "odd_channels",
            Error::TooFewDistinctValues { .. } => "too_few_distinct_values",
            Error::SymbolOutOfRange { .. } => "symbol_out_of_range",
            Error::CorruptPayload(_) => "corrupt_payload",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated(_) => "truncated",
            Error::ModelMismatch(_) => "model_mismatch",
            Error::NanLoss { .. } => "nan_loss",
            Error::InvalidConfig(_) => "invalid_config",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
