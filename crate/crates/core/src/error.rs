use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV header: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedCodec(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),

    #[error("no WAV files found under {0}")]
    EmptyDataset(PathBuf),

    #[error("unrecognized dataset layout at {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("group {group} has {available} normal clips, {required} required for the test split")]
    InsufficientNormal {
        group: String,
        available: usize,
        required: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("spectrogram has {frames} frames, patch width is {width}")]
    TooShort { frames: usize, width: usize },

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("need at least {required} samples, got {found}")]
    NotEnoughSamples { required: usize, found: usize },

    #[error("solver did not converge after {iterations} updates (KKT violation {violation:.3e})")]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("embedding backend: {0}")]
    Backend(String),

    #[error("backend output has {found} features, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("clip {0} not present in feature cache")]
    MissingClip(String),

    #[error("need both normal and anomalous clips to compute AUC")]
    SingleClass,

    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
