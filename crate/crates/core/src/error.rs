use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("silent signal")]
    SilentSignal,

    #[error("unstable filter: poles outside the unit circle (a1={a1}, a2={a2})")]
    UnstableFilter { a1: f64, a2: f64 },

    #[error("clip too short: {frames} frames, model needs at least {needed}")]
    ClipTooShort { frames: usize, needed: usize },

    #[error("forward cache already consumed")]
    CacheConsumed,

    #[error("backward requires a cache from a train-mode forward pass")]
    EvalCache,

    #[error("degenerate room: {0}")]
    DegenerateRoom(String),

    #[error("impulse response has no significant tap")]
    EmptyRir,

    #[error("undecayable impulse response: {0}")]
    Undecayable(String),

    #[error("impulse response ({rir} taps) longer than signal ({signal} samples)")]
    RirTooLong { rir: usize, signal: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),

    #[error("missing ground truth for {0}")]
    MissingGroundTruth(PathBuf),

    #[error("stream already flushed")]
    AlreadyFlushed,

    #[error("invalid chunk: {0}")]
    InvalidChunk(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
