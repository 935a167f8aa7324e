//! Audio tokenization: token grids and residual-VQ codecs.

mod grid;
mod loss;
mod neural;
mod rvq;
mod synthetic;

pub use grid::TokenGrid;
pub use loss::{l1_loss_and_grad, snr_db, LogMelLoss};
pub use neural::{
    train_codec, CodecConfig, CodecStepStats, CodecTrainOptions, CodecTrainer, NeuralCodec, SpectralScale,
};
pub use rvq::{Quantized, ResidualVq};
pub use synthetic::SyntheticCodec;

use crate::dsp::AudioClip;
use crate::Result;

/// Audio to `codebooks × frames` token grid and back.
pub trait Codec {
    fn codebooks(&self) -> usize;
    fn vocab(&self) -> usize;
    /// Samples per token frame.
    fn hop(&self) -> usize;
    fn encode(&self, clip: &AudioClip) -> Result<TokenGrid>;
    /// Output length is `frames · hop`. Fails on any masked cell.
    fn decode(&self, grid: &TokenGrid) -> Result<AudioClip>;
    /// Identity of the checkpoint, recorded in generation traces.
    fn fingerprint(&self) -> u64;
}
