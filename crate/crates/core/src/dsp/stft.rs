use alloc::vec;
use alloc::vec::Vec;

use crate::fft::{Complex, Fft};

/// Number of analysis frames for `n_samples` at `hop`: `ceil(n / hop)`.
pub fn frame_count(n_samples: usize, hop: usize) -> usize {
    n_samples.div_ceil(hop)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

/// Short-time Fourier analysis with frames centred on hop midpoints.
///
/// Frame `t` is centred on sample `t * hop + hop / 2`, so it describes the
/// same stretch of audio as codec token frame `t`. Samples outside the clip
/// read as zero.
#[derive(Clone, Debug)]
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Fft,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        assert!(hop >= 1 && n_fft >= hop, "stft requires n_fft >= hop >= 1");
        Stft {
            n_fft,
            hop,
            window: hann_window(n_fft),
            fft: Fft::new(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// First sample (possibly negative) covered by frame `t`.
    pub fn frame_start(&self, t: usize) -> isize {
        (t * self.hop + self.hop / 2) as isize - (self.n_fft / 2) as isize
    }

    /// Complex spectrum of frame `t` into `buf` (length `n_fft`).
    pub fn spectrum(&self, samples: &[f32], t: usize, buf: &mut [Complex]) {
        let start = self.frame_start(t);
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < samples.len() {
                f64::from(samples[idx as usize])
            } else {
                0.0
            };
            *slot = Complex::new(x * self.window[i], 0.0);
        }
        self.fft.forward(buf);
    }

    /// Power spectrum `|X_k|²` for bins `0..=n_fft/2` of every frame,
    /// row-major `frames × n_bins`.
    pub fn power(&self, samples: &[f32]) -> (usize, Vec<f64>) {
        let frames = frame_count(samples.len(), self.hop);
        let nb = self.n_bins();
        let mut out = vec![0.0; frames * nb];
        let mut buf = vec![Complex::default(); self.n_fft];
        for t in 0..frames {
            self.spectrum(samples, t, &mut buf);
            for k in 0..nb {
                out[t * nb + k] = buf[k].norm_sqr();
            }
        }
        (frames, out)
    }

    /// Magnitude spectrum, row-major `frames × n_bins`.
    pub fn magnitude(&self, samples: &[f32]) -> (usize, Vec<f64>) {
        let (frames, mut p) = self.power(samples);
        for v in &mut p {
            *v = libm::sqrt(*v);
        }
        (frames, p)
    }

    pub(crate) fn fft(&self) -> &Fft {
        &self.fft
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_is_ceiling() {
        assert_eq!(frame_count(44_100, 512), 87);
        assert_eq!(frame_count(512, 512), 1);
        assert_eq!(frame_count(513, 512), 2);
        assert_eq!(frame_count(88_200, 512), 173);
    }

    #[test]
    fn parseval_on_interior_frame() {
        let stft = Stft::new(256, 64);
        let x: Vec<f32> = (0..2048).map(|i| libm::sinf(i as f32 * 0.05)).collect();
        let mut buf = vec![Complex::default(); 256];
        stft.spectrum(&x, 10, &mut buf);
        let time: f64 = (0..256)
            .map(|i| {
                let s = x[(stft.frame_start(10) + i as isize) as usize] as f64 * stft.window()[i];
                s * s
            })
            .sum();
        let freq: f64 = buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / 256.0;
        assert!((time - freq).abs() < 1e-9 * time.max(1.0));
    }
}
