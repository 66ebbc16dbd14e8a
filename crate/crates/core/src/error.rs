use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid microphone array: {0}")]
    InvalidArray(String),

    #[error("invalid search region: {0}")]
    InvalidRegion(String),

    #[error("grid spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),

    #[error("points per volume edge must be at least 2, got {0}")]
    InvalidAlpha(usize),

    #[error("lag {lag} for pair {pair} is outside the correlation range ±{max_lag}")]
    LagOutOfRange { pair: usize, lag: i32, max_lag: usize },

    #[error("lag {0} does not fit the compact table representation")]
    LagOverflow(i32),

    #[error("table holds {table} pairs but the correlation set holds {corr}")]
    PairMismatch { table: usize, corr: usize },

    #[error("frames must have equal lengths ({0} vs {1})")]
    FrameLengthMismatch(usize, usize),

    #[error("maximum lag {max_lag} must be smaller than the frame length {frame_len}")]
    MaxLagTooLarge { max_lag: usize, frame_len: usize },

    #[error("signal of {len} samples is shorter than one frame of {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("invalid frame plan: {0}")]
    InvalidFramePlan(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {0} estimates vs {1} truths")]
    LengthMismatch(usize, usize),

    #[error("invalid room: {0}")]
    InvalidRoom(String),

    #[error("T60 of {t60} s needs an absorption coefficient of {absorption:.3}, above 1")]
    T60TooShort { t60: f64, absorption: f64 },

    #[error("source and microphone coincide at {0:?}")]
    SourceAtMic([f64; 3]),

    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("expected {expected} channels, found {found}")]
    ChannelCount { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error("table cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
