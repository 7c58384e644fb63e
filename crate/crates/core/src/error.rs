use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped by the subsystem that raises them, but share one enum
/// so callers (the CLI in particular) can map them onto exit codes uniformly.
#[derive(Debug, Error)]
pub enum Error {
    // tensors and kernels
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("convolution produces an empty output: {0}")]
    EmptyOutput(String),
    #[error("validation error: {0}")]
    Validation(String),

    // decoders
    #[error("weight manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("unsupported architecture `{0}`")]
    UnsupportedArch(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    // file formats
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("value {value} of tensor `{name}` is not representable as f16")]
    UnrepresentableValue { name: String, value: f32 },
    #[error("value {0} outside the [0, 1] pixel range")]
    RangeError(f32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // metrics and losses
    #[error("too few rows: need at least 2 samples, got {0}")]
    TooFewRows(usize),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("eigendecomposition did not converge")]
    EigenFailure,
    #[error("empty input")]
    EmptyInput,
    #[error("too few frames: need at least 2, got {0}")]
    TooFewFrames(usize),

    // benchmark harness
    #[error("benchmark spec mismatch: {0}")]
    SpecMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, shapes, flags) rather
    /// than by the engine itself.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::EigenFailure)
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::ShapeMismatch(format!($($arg)*))
    };
}
pub(crate) use shape_err;
