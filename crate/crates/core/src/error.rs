use std::path::PathBuf;

/// Errors produced anywhere in the augmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("channel mismatch: expected {expected} channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimension { width: u32, height: u32 },

    #[error("placement error: {0}")]
    Placement(String),

    #[error("mask has no foreground pixels")]
    NoForeground,

    #[error("mask covers the whole image, no background left")]
    NoBackground,

    #[error("hole covers {coverage:.4} of the image, too large for pyramid fill")]
    DegenerateHole { coverage: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("strength {0} truncates to zero timesteps; nothing to train")]
    InvalidStrength(f64),

    #[error("denoiser backend error: {0}")]
    Backend(String),

    #[error("optimisation diverged at step {step} (loss trace has {} entries)", trace.len())]
    Diverged { step: usize, trace: Vec<f64> },

    #[error("bank integrity violation: {0}")]
    Integrity(String),

    #[error("unknown class {0}")]
    UnknownClass(u32),

    #[error("class {0} has no real CDPs")]
    EmptyClass(u32),

    #[error("no eligible CIP: {0}")]
    NoEligibleCip(String),

    #[error("gave up after {0} attempts with zero visible foreground")]
    RetryExhausted(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("image data: {0}")]
    ImageData(#[source] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
