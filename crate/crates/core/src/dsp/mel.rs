use alloc::vec;
use alloc::vec::Vec;

use super::{AudioClip, Stft};
use crate::{Error, Result};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Triangular filterbank on the HTK mel scale spanning 0 Hz to Nyquist.
///
/// Triangles peak at 1 and are not area-normalized.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    centers_hz: Vec<f64>,
    // (first bin, weights) per band
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, n_mels: usize, sample_rate: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let nyquist = f64::from(sample_rate) / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(sample_rate) / n_fft as f64;
        let mut filters = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    if first.is_none() {
                        first = Some(k);
                    }
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        MelFilterbank {
            n_mels,
            n_bins,
            centers_hz: edges[1..=n_mels].to_vec(),
            filters,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.centers_hz[band]
    }

    /// Weight of FFT bin `k` in band `m`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (first, w) = &self.filters[m];
        if k >= *first && k < first + w.len() {
            w[k - first]
        } else {
            0.0
        }
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
        }
    }

    /// Transposed application: accumulates `∂L/∂power` from `∂L/∂mel`.
    pub fn apply_transposed(&self, grad_mel: &[f64], grad_power: &mut [f64]) {
        for (g, (first, w)) in grad_mel.iter().zip(&self.filters) {
            for (i, wi) in w.iter().enumerate() {
                grad_power[first + i] += g * wi;
            }
        }
    }
}

/// `n_mels × frames` mel-band power, row-major by band.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    n_mels: usize,
    frames: usize,
    hop: usize,
    values: Vec<f64>,
}

impl MelSpectrogram {
    /// Wraps an existing matrix; values must be finite and nonnegative.
    pub fn from_values(n_mels: usize, frames: usize, hop: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_mels * frames {
            return Err(Error::Shape(alloc::format!(
                "mel matrix has {} values, expected {n_mels}x{frames}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "mel values must be finite and nonnegative".into(),
            ));
        }
        Ok(MelSpectrogram {
            n_mels,
            frames,
            hop,
            values,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.frames..(band + 1) * self.frames]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Energy of each band summed over all frames (sequential in time).
    pub fn band_totals(&self) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.band(m).iter().sum()).collect()
    }
}

/// Reusable mel analysis (FFT plan, window, filterbank).
#[derive(Clone, Debug)]
pub struct MelAnalyzer {
    stft: Stft,
    bank: MelFilterbank,
}

impl MelAnalyzer {
    pub fn new(n_fft: usize, hop: usize, n_mels: usize, sample_rate: u32) -> Result<Self> {
        if hop == 0 || n_fft < hop || !n_fft.is_power_of_two() {
            return Err(Error::InvalidArgument(alloc::format!(
                "mel analysis needs a power-of-two n_fft >= hop >= 1 (n_fft {n_fft}, hop {hop})"
            )));
        }
        if n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be positive".into()));
        }
        Ok(MelAnalyzer {
            stft: Stft::new(n_fft, hop),
            bank: MelFilterbank::new(n_fft, n_mels, sample_rate),
        })
    }

    /// Pipeline defaults: 2048-point window, 512 hop, 80 bands, 44.1 kHz.
    pub fn pipeline_default() -> Self {
        Self::new(super::N_FFT, super::HOP, super::N_MELS, crate::SAMPLE_RATE)
            .expect("default mel parameters are valid")
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn compute(&self, clip: &AudioClip) -> MelSpectrogram {
        self.compute_samples(clip.samples())
    }

    pub(crate) fn compute_samples(&self, samples: &[f32]) -> MelSpectrogram {
        let (frames, power) = self.stft.power(samples);
        let nb = self.stft.n_bins();
        let n_mels = self.bank.n_mels();
        let mut values = vec![0.0; n_mels * frames];
        let mut row = vec![0.0; n_mels];
        for t in 0..frames {
            self.bank.apply(&power[t * nb..(t + 1) * nb], &mut row);
            for m in 0..n_mels {
                values[m * frames + t] = row[m];
            }
        }
        MelSpectrogram {
            n_mels,
            frames,
            hop: self.stft.hop(),
            values,
        }
    }
}

/// Mel power spectrogram of `clip` with a Hann-windowed STFT.
pub fn mel_spectrogram(clip: &AudioClip, n_fft: usize, hop: usize, n_mels: usize) -> Result<MelSpectrogram> {
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    Ok(MelAnalyzer::new(n_fft, hop, n_mels, clip.sample_rate())?.compute(clip))
}
