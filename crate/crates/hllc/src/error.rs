use std::io;

use thiserror::Error;

/// Errors reported by coders, codecs and the container format.
#[derive(Debug, Error)]
pub enum Error {
    /// A pop ran out of stream words. The bits-back chain needs a larger
    /// initial buffer (or a seed policy that provides one).
    #[error("insufficient bits: the message stream underflowed; seed the chain with at least {needed_words} more words")]
    InsufficientBits { needed_words: usize },

    #[error("shape mismatch: expected {expected} lanes, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("precision {0} out of range (1..=24)")]
    InvalidPrecision(u32),

    #[error("alphabet of {symbols} symbols cannot be quantized at precision {precision}")]
    AlphabetTooLarge { symbols: usize, precision: u32 },

    #[error("cdf is not monotone: bin {bin} has negative mass")]
    NonMonotoneCdf { bin: usize },

    #[error("cdf does not span (0, 1): endpoints are ({lo}, {hi})")]
    CdfDoesNotSpan { lo: f64, hi: f64 },

    #[error("invalid bin count {0}: must be a power of two in 2..=65536")]
    InvalidBinCount(usize),

    #[error("image header out of bounds: {0}x{1}x{2}")]
    HeaderBounds(usize, usize, usize),

    #[error("word sequence is not a valid flattened message: {0}")]
    BadFlatWords(String),

    #[error("container error: {0}")]
    BadContainer(String),

    #[error("patch plan invalid: {0}")]
    PlanInvalid(String),

    #[error("buffer too small for the next stage: have {have_words} words, need {needed_words}")]
    BufferInsufficient { have_words: usize, needed_words: usize },

    #[error("unknown model id {0}")]
    UnknownModel(u8),

    #[error("pnm error: {0}")]
    Pnm(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
