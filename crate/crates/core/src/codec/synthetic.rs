use alloc::vec;
use alloc::vec::Vec;

use super::{Codec, TokenGrid};
use crate::dsp::AudioClip;
use crate::{Error, Fnv64, Result};

const CLICK_TAPS: usize = 33;

/// Deterministic stand-in codec that needs no training.
///
/// Codebook 0 holds each frame's peak level quantized to `0..vocab`; the
/// remaining codebooks hold hashes of the frame's level statistics.
/// Decoding renders one band-limited click per frame, scaled by the
/// codebook-0 level, and ignores the other codebooks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCodec {
    codebooks: usize,
    vocab: usize,
    hop: usize,
    sample_rate: u32,
}

impl SyntheticCodec {
    pub fn new(codebooks: usize, vocab: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        if codebooks == 0 || vocab < 2 || hop == 0 {
            return Err(Error::InvalidArgument("synthetic codec needs C ≥ 1, K ≥ 2, hop ≥ 1".into()));
        }
        Ok(SyntheticCodec { codebooks, vocab, hop, sample_rate })
    }

    /// Hann-windowed sinc with cutoff at a quarter of the sample rate.
    fn click() -> [f32; CLICK_TAPS] {
        let mut taps = [0.0f32; CLICK_TAPS];
        let mid = (CLICK_TAPS / 2) as f64;
        for (i, tap) in taps.iter_mut().enumerate() {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 { 1.0 } else { libm::sin(core::f64::consts::FRAC_PI_2 * x) / (core::f64::consts::FRAC_PI_2 * x) };
            let w = 0.5 + 0.5 * libm::cos(core::f64::consts::PI * x / (mid + 1.0));
            *tap = (sinc * w) as f32;
        }
        taps
    }
}

impl Codec for SyntheticCodec {
    fn codebooks(&self) -> usize {
        self.codebooks
    }

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn hop(&self) -> usize {
        self.hop
    }

    fn encode(&self, clip: &AudioClip) -> Result<TokenGrid> {
        if clip.len() < self.hop {
            return Err(Error::TooShort { len: clip.len(), min: self.hop });
        }
        let frames = clip.len().div_ceil(self.hop);
        let top = (self.vocab - 1) as f32;
        let mut tokens = vec![0u32; self.codebooks * frames];
        for (t, chunk) in clip.samples().chunks(self.hop).enumerate() {
            let peak = chunk.iter().fold(0.0f32, |m, s| m.max(s.abs())).min(1.0);
            let level = libm::roundf(peak * top) as u32;
            let mean_sq = chunk.iter().map(|s| s * s).sum::<f32>() / chunk.len() as f32;
            let rms = libm::roundf(libm::sqrtf(mean_sq) * 1000.0) as u64;
            tokens[t] = level;
            for c in 1..self.codebooks {
                let mut h = Fnv64::default();
                h.write_u64(u64::from(level));
                h.write_u64(c as u64);
                h.write_u64(rms);
                tokens[c * frames + t] = (h.finish() % self.vocab as u64) as u32;
            }
        }
        TokenGrid::from_tokens(self.codebooks, frames, self.vocab, self.hop, tokens)
    }

    fn decode(&self, grid: &TokenGrid) -> Result<AudioClip> {
        if grid.codebooks() != self.codebooks || grid.vocab() != self.vocab {
            return Err(Error::Shape(alloc::format!(
                "grid is {}×K{}, codec is {}×K{}",
                grid.codebooks(),
                grid.vocab(),
                self.codebooks,
                self.vocab
            )));
        }
        let frames = grid.frames();
        let mut out: Vec<f32> = vec![0.0; frames * self.hop];
        let click = Self::click();
        let top = (self.vocab - 1) as f32;
        for t in 0..frames {
            for c in 0..self.codebooks {
                grid.token(c, t)?;
            }
            let amp = grid.token(0, t)? as f32 / top;
            for (i, &k) in click.iter().enumerate() {
                if let Some(o) = out.get_mut(t * self.hop + i) {
                    *o += amp * k;
                }
            }
        }
        AudioClip::new(out, self.sample_rate)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write(b"synthetic");
        for v in [self.codebooks, self.vocab, self.hop, self.sample_rate as usize] {
            h.write_u64(v as u64);
        }
        h.finish()
    }
}
