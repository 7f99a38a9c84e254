use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: truncated payload at byte offset {offset}")]
    Truncated { path: PathBuf, offset: usize },

    #[error("{path}: {channels} channels, only mono is supported")]
    UnsupportedChannels { path: PathBuf, channels: u16 },

    #[error("{path}: unsupported encoding ({encoding})")]
    Codec { path: PathBuf, encoding: String },

    #[error("{path}: sample rate {found} Hz, expected {expected} Hz")]
    SampleRate {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("cannot parse clip name {path:?}: bad {component}")]
    ClipName { path: String, component: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("waveform has {samples} samples, shorter than one {frame_len}-sample frame")]
    TooShort { samples: usize, frame_len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("frequency range error: {0}")]
    Range(String),

    #[error("filter bank construction error: {0}")]
    Construction(String),

    #[error("filter {index} has no FFT bin inside its support ({left:.3} Hz, {right:.3} Hz)")]
    DegenerateFilter { index: usize, left: f64, right: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input value at index {index}")]
    NonFinite { index: usize },

    #[error("cosine distance undefined between two zero vectors")]
    UndefinedDistance,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("harmonic mean requires positive values, got {0}")]
    NonPositive(f64),

    #[error("duplicate clip id {0:?}")]
    DuplicateClip(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {total} clips failed; first: {first}")]
    ClipsFailed {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
