use alloc::vec;

use crate::dsp::{MelFilterbank, Stft};
use crate::fft::Complex;

/// One resolution of the log-mel L1 loss.
#[derive(Clone, Debug)]
pub struct LogMelLoss {
    stft: Stft,
    mel: MelFilterbank,
    floor: f64,
}

impl LogMelLoss {
    /// `floor` is added to every mel energy before the logarithm.
    pub fn new(n_fft: usize, hop: usize, n_mels: usize, sample_rate: u32, floor: f64) -> Self {
        LogMelLoss { stft: Stft::new(n_fft, hop), mel: MelFilterbank::new(n_fft, n_mels, sample_rate), floor }
    }

    fn log_mel(&self, spec: &[Complex], power: &mut [f64], out: &mut [f64]) {
        for (p, c) in power.iter_mut().zip(spec) {
            *p = c.norm_sqr();
        }
        self.mel.apply(power, out);
    }

    /// Mean `|log(M̂ + floor) − log(M + floor)|` over frames and bands. Adds
    /// `weight · ∂loss/∂pred` into `grad`.
    pub fn loss_and_grad(&self, pred: &[f32], target: &[f32], weight: f64, grad: &mut [f32]) -> f64 {
        debug_assert_eq!(pred.len(), target.len());
        let n = self.stft.n_fft();
        let nb = self.stft.n_bins();
        let nm = self.mel.n_mels();
        let frames = pred.len().div_ceil(self.stft.hop());
        let scale = 1.0 / (frames * nm) as f64;
        let mut ys = vec![Complex::default(); n];
        let mut xs = vec![Complex::default(); n];
        let mut power = vec![0.0; nb];
        let (mut mp, mut mt) = (vec![0.0; nm], vec![0.0; nm]);
        let mut gm = vec![0.0; nm];
        let mut gp = vec![0.0; nb];
        let mut total = 0.0;
        for t in 0..frames {
            self.stft.spectrum(pred, t, &mut ys);
            self.stft.spectrum(target, t, &mut xs);
            self.log_mel(&ys, &mut power, &mut mp);
            self.log_mel(&xs, &mut power, &mut mt);
            for b in 0..nm {
                let d = libm::log(mp[b] + self.floor) - libm::log(mt[b] + self.floor);
                total += d.abs();
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gm[b] = weight * scale * s / (mp[b] + self.floor);
            }
            gp.fill(0.0);
            self.mel.apply_transposed(&gm, &mut gp);
            for (k, z) in ys.iter_mut().enumerate() {
                *z = if k < nb { Complex::new(z.re * gp[k], z.im * gp[k]) } else { Complex::default() };
            }
            self.stft.fft().inverse_unnormalized(&mut ys);
            let start = self.stft.frame_start(t);
            let win = self.stft.window();
            for (i, z) in ys.iter().enumerate() {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < grad.len() {
                    grad[idx as usize] += (2.0 * win[i] * z.re) as f32;
                }
            }
        }
        total * scale
    }
}

/// Mean absolute sample error; adds `weight · ∂loss/∂pred` into `grad`.
pub fn l1_loss_and_grad(pred: &[f32], target: &[f32], weight: f64, grad: &mut [f32]) -> f64 {
    let scale = 1.0 / pred.len() as f64;
    let g = (weight * scale) as f32;
    let mut total = 0.0;
    for ((p, t), d) in pred.iter().zip(target).zip(grad.iter_mut()) {
        let e = p - t;
        total += f64::from(e.abs());
        if e > 0.0 {
            *d += g;
        } else if e < 0.0 {
            *d -= g;
        }
    }
    total * scale
}

/// Decibel ratio of signal energy to error energy.
pub fn snr_db(reference: &[f32], estimate: &[f32]) -> f64 {
    let sig: f64 = reference.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
    let err: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    10.0 * libm::log10(sig / err.max(1e-30))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_mel_gradient_matches_finite_differences() {
        let loss = LogMelLoss::new(64, 16, 8, 44_100, 1e-5);
        let target: Vec<f32> = (0..100).map(|i| libm::sinf(i as f32 * 0.3) * 0.5).collect();
        let pred: Vec<f32> = (0..100).map(|i| libm::sinf(i as f32 * 0.31 + 0.2) * 0.4 + 0.01).collect();
        let mut grad = vec![0.0f32; 100];
        loss.loss_and_grad(&pred, &target, 1.0, &mut grad);
        let mut scratch = vec![0.0f32; 100];
        for &i in &[0usize, 7, 31, 50, 77, 99] {
            let h = 1e-4f32;
            let mut p = pred.clone();
            p[i] += h;
            let up = loss.loss_and_grad(&p, &target, 1.0, &mut scratch);
            p[i] -= 2.0 * h;
            let dn = loss.loss_and_grad(&p, &target, 1.0, &mut scratch);
            let fd = (up - dn) / (2.0 * f64::from(h));
            let g = f64::from(grad[i]);
            assert!((fd - g).abs() <= 2e-2 * fd.abs().max(g.abs()) + 1e-4, "sample {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn identical_signals_have_zero_loss() {
        let loss = LogMelLoss::new(64, 16, 8, 44_100, 1e-5);
        let x: Vec<f32> = (0..80).map(|i| (i as f32 * 0.1).cos()).collect();
        let mut grad = vec![0.0f32; 80];
        assert_eq!(loss.loss_and_grad(&x, &x, 1.0, &mut grad), 0.0);
        assert_eq!(l1_loss_and_grad(&x, &x, 1.0, &mut grad), 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l1_gradient_is_scaled_sign() {
        let mut g = vec![0.0f32; 4];
        let l = l1_loss_and_grad(&[1.0, -1.0, 0.5, 0.0], &[0.0, 0.0, 0.5, 1.0], 2.0, &mut g);
        assert_eq!(l, 0.75);
        assert_eq!(g, vec![0.5, -0.5, 0.0, -0.5]);
    }

    #[test]
    fn snr_of_half_amplitude_error() {
        let x = [1.0f32, -1.0, 1.0, -1.0];
        let y = [0.5f32, -0.5, 0.5, -0.5];
        assert!((snr_db(&x, &y) - 10.0 * libm::log10(4.0)).abs() < 1e-12);
    }
}
