//! Audio buffers, spectral analysis and rhythm-prompt augmentation.

mod augment;
mod clip;
pub mod filters;
mod mel;
mod mfcc;
mod stft;

pub use augment::{augment, AugmentFlags, AugmentParams, AugmentRanges};
pub use clip::AudioClip;
pub use mel::{mel_spectrogram, MelAnalyzer, MelFilterbank, MelSpectrogram};
pub use mfcc::{mfcc_frames, mfcc_timeavg, MfccAnalyzer, MfccVector, MFCC_LOG_FLOOR};
pub use stft::{frame_count, hann_window, Stft};

/// Default analysis window, in samples.
pub const N_FFT: usize = 2048;
/// Default hop; equals the codec hop so spectral frames align with token frames.
pub const HOP: usize = 512;
/// Default number of mel bands.
pub const N_MELS: usize = 80;
