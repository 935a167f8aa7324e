use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("clip too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token grid has a masked cell at codebook {codebook}, frame {frame}")]
    MaskedCell { codebook: usize, frame: usize },
    #[error("codec has not been trained")]
    UntrainedCodec,
    #[error("mask plan selects no cells")]
    EmptyMask,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
    #[error("fingerprint mismatch for {what}: trace has {expected:016x}, supplied {found:016x}")]
    Fingerprint {
        what: &'static str,
        expected: u64,
        found: u64,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
