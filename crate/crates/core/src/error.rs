use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal is empty")]
    EmptySignal,
    #[error("signal contains non-finite samples")]
    NonFiniteSignal,
    #[error("invalid sample rate: {0}")]
    InvalidSampleRate(u32),
    #[error("frame size {0} is not a power of two")]
    FrameSizeNotPowerOfTwo(usize),
    #[error("hop size {hop} must satisfy 0 < hop <= frame size {frame} and divide it")]
    InvalidHop { hop: usize, frame: usize },
    #[error("signal of {len} samples is shorter than one frame ({needed})")]
    SignalTooShort { len: usize, needed: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("degenerate (all-zero) spectrum")]
    DegenerateSpectrum,
    #[error("LPC order {order} needs at least {needed} spectral bins, got {bins}")]
    OrderTooLarge {
        order: usize,
        bins: usize,
        needed: usize,
    },
    #[error("autocorrelation at lag zero must be positive, got {0}")]
    NonPositiveEnergy(f64),
    #[error("envelope has length {got}, expected {expected}")]
    EnvelopeLength { expected: usize, got: usize },
    #[error("clip is silent: every frame is below the energy floor")]
    SilentClip,
    #[error("at least 2 instruments are required, got {0}")]
    TooFewInstruments(usize),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("clip of {clip} samples does not fit in a mixture of {mixture} samples")]
    ClipTooLong { clip: usize, mixture: usize },
    #[error("instrument {0} has no clips")]
    NoClips(usize),
    #[error("count mismatch: {estimates} estimates vs {references} references")]
    CountMismatch { estimates: usize, references: usize },
    #[error("reference signal {0} is all zeros")]
    ZeroReference(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("WAV error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
