use alloc::vec;
use alloc::vec::Vec;

use super::{AudioClip, MelAnalyzer};
use crate::{Error, Result};

/// Additive floor inside the log of mel power.
pub const MFCC_LOG_FLOOR: f64 = 1e-10;

/// Time-averaged cepstral coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccVector {
    pub coeffs: Vec<f64>,
}

/// Log-mel + orthonormal DCT-II analysis. Keeps as many coefficients as
/// there are mel bands (80 by default).
#[derive(Clone, Debug)]
pub struct MfccAnalyzer {
    mel: MelAnalyzer,
    dct: Vec<f64>,
    n: usize,
}

impl MfccAnalyzer {
    pub fn new(mel: MelAnalyzer) -> Self {
        let n = mel.filterbank().n_mels();
        let mut dct = vec![0.0; n * n];
        for k in 0..n {
            let scale = if k == 0 {
                libm::sqrt(1.0 / n as f64)
            } else {
                libm::sqrt(2.0 / n as f64)
            };
            for i in 0..n {
                dct[k * n + i] =
                    scale * libm::cos(core::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64);
            }
        }
        MfccAnalyzer { mel, dct, n }
    }

    pub fn pipeline_default() -> Self {
        Self::new(MelAnalyzer::pipeline_default())
    }

    pub fn n_coeffs(&self) -> usize {
        self.n
    }

    /// Per-frame coefficients, row-major `frames × n_coeffs`.
    pub fn frames(&self, clip: &AudioClip) -> (usize, Vec<f64>) {
        let mel = self.mel.compute(clip);
        let (n, t) = (self.n, mel.frames());
        let mut out = vec![0.0; t * n];
        let mut logmel = vec![0.0; n];
        for f in 0..t {
            for (m, slot) in logmel.iter_mut().enumerate() {
                *slot = libm::log(mel.get(m, f) + MFCC_LOG_FLOOR);
            }
            for k in 0..n {
                let row = &self.dct[k * n..(k + 1) * n];
                out[f * n + k] = row.iter().zip(&logmel).map(|(a, b)| a * b).sum();
            }
        }
        (t, out)
    }

    pub fn timeavg(&self, clip: &AudioClip) -> MfccVector {
        let (t, frames) = self.frames(clip);
        let n = self.n;
        let mut coeffs = vec![0.0; n];
        for f in 0..t {
            for k in 0..n {
                coeffs[k] += frames[f * n + k];
            }
        }
        for c in &mut coeffs {
            *c /= t as f64;
        }
        MfccVector { coeffs }
    }
}

/// Per-frame MFCCs with the pipeline defaults.
pub fn mfcc_frames(clip: &AudioClip) -> (usize, Vec<f64>) {
    MfccAnalyzer::pipeline_default().frames(clip)
}

/// Time-averaged 80-coefficient MFCC vector with the pipeline defaults.
pub fn mfcc_timeavg(clip: &AudioClip) -> Result<MfccVector> {
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    Ok(MfccAnalyzer::pipeline_default().timeavg(clip))
}
