use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// [`Error::code`] maps each variant onto the coarse process exit categories
/// used by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown scheme: {0}")]
    UnknownScheme(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("zero-power frame")]
    ZeroPowerFrame,

    #[error("cell ({scheme}, {snr_db} dB): requested {requested} frames from {split} split but only {available} available")]
    OversizedSelection {
        scheme: String,
        snr_db: i8,
        split: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward called on {0} without a recorded forward pass")]
    NoForward(&'static str),

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("batch of {batch} exceeds the {available} available frames")]
    BatchTooLarge { batch: usize, available: usize },

    #[error("nothing to fine-tune")]
    NothingToFinetune,

    #[error("missing parameter {0}")]
    MissingParameter(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_)
            | Error::UnknownScheme(_)
            | Error::NothingToFinetune
            | Error::InvalidTemperature(_)
            | Error::BatchTooLarge { .. } => ErrorKind::Usage,
            Error::NonFinite(_) | Error::NumericFailure(_) | Error::ZeroNorm => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    /// Distinct numeric code per variant, used in diagnostics.
    pub fn code(&self) -> u16 {
        match self {
            Error::UnknownScheme(_) => 10,
            Error::InvalidConfig(_) => 11,
            Error::NonFinite(_) => 12,
            Error::EmptyDataset => 20,
            Error::ZeroPowerFrame => 21,
            Error::OversizedSelection { .. } => 22,
            Error::BadMagic { .. } => 30,
            Error::UnsupportedVersion(_) => 31,
            Error::Truncated { .. } => 32,
            Error::TrailingBytes { .. } => 33,
            Error::ChecksumMismatch { .. } => 34,
            Error::Malformed(_) => 35,
            Error::ShapeMismatch { .. } => 40,
            Error::LabelOutOfRange { .. } => 41,
            Error::NoForward(_) => 42,
            Error::ZeroNorm => 43,
            Error::InvalidTemperature(_) => 44,
            Error::BatchTooLarge { .. } => 45,
            Error::NothingToFinetune => 46,
            Error::MissingParameter(_) => 47,
            Error::NumericFailure(_) => 50,
            Error::Io { .. } => 60,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
