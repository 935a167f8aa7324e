use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::filters::Biquad;
use super::AudioClip;
use crate::fft::{Complex, Fft};

/// Which augmentations to apply. Applied in declaration order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentFlags {
    pub noise: bool,
    pub band_pass: bool,
    pub pitch_shift: bool,
    pub phase_shift: bool,
    pub eq: bool,
}

impl AugmentFlags {
    pub const NONE: AugmentFlags = AugmentFlags {
        noise: false,
        band_pass: false,
        pitch_shift: false,
        phase_shift: false,
        eq: false,
    };
    pub const ALL: AugmentFlags = AugmentFlags {
        noise: true,
        band_pass: true,
        pitch_shift: true,
        phase_shift: true,
        eq: true,
    };

    /// Each augmentation enabled independently with probability `p`.
    pub fn sample<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Self {
        AugmentFlags {
            noise: rng.gen_bool(p),
            band_pass: rng.gen_bool(p),
            pitch_shift: rng.gen_bool(p),
            phase_shift: rng.gen_bool(p),
            eq: rng.gen_bool(p),
        }
    }

    pub fn any(&self) -> bool {
        self.noise || self.band_pass || self.pitch_shift || self.phase_shift || self.eq
    }
}

/// Parameter ranges the augmentations draw from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub snr_db: (f64, f64),
    pub band_low_hz: (f64, f64),
    pub band_high_hz: (f64, f64),
    pub semitones: (f64, f64),
    pub eq_gain_db: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            snr_db: (5.0, 30.0),
            band_low_hz: (40.0, 400.0),
            band_high_hz: (2_000.0, 16_000.0),
            semitones: (-3.0, 3.0),
            eq_gain_db: (-9.0, 9.0),
        }
    }
}

/// Concrete draws for one augmentation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    /// (SNR in dB, noise seed)
    pub noise: Option<(f64, u64)>,
    /// (low corner, high corner) in Hz
    pub band_pass: Option<(f64, f64)>,
    pub semitones: Option<f64>,
    pub phase_seed: Option<u64>,
    /// low-shelf, mid peak, high-shelf gains in dB
    pub eq_db: Option<[f64; 3]>,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            noise: None,
            band_pass: None,
            semitones: None,
            phase_seed: None,
            eq_db: None,
        }
    }

    /// Draws parameters for the enabled augmentations. The number of draws
    /// is fixed regardless of `flags` so later RNG consumers are unaffected.
    pub fn sample<R: Rng + ?Sized>(flags: AugmentFlags, ranges: &AugmentRanges, rng: &mut R) -> Self {
        let snr = rng.gen_range(ranges.snr_db.0..=ranges.snr_db.1);
        let noise_seed = rng.next_u64();
        let lo = rng.gen_range(ranges.band_low_hz.0..=ranges.band_low_hz.1);
        let hi = rng.gen_range(ranges.band_high_hz.0..=ranges.band_high_hz.1);
        let st = rng.gen_range(ranges.semitones.0..=ranges.semitones.1);
        let phase_seed = rng.next_u64();
        let eq = [
            rng.gen_range(ranges.eq_gain_db.0..=ranges.eq_gain_db.1),
            rng.gen_range(ranges.eq_gain_db.0..=ranges.eq_gain_db.1),
            rng.gen_range(ranges.eq_gain_db.0..=ranges.eq_gain_db.1),
        ];
        AugmentParams {
            noise: flags.noise.then_some((snr, noise_seed)),
            band_pass: flags.band_pass.then_some((lo, hi)),
            semitones: flags.pitch_shift.then_some(st),
            phase_seed: flags.phase_shift.then_some(phase_seed),
            eq_db: flags.eq.then_some(eq),
        }
    }

    /// Applies the drawn augmentations in the fixed order noise, band-pass,
    /// pitch shift, phase shift, EQ, then clips to `[-1, 1]`.
    pub fn apply(&self, clip: &AudioClip) -> AudioClip {
        if *self == Self::identity() {
            return clip.clone();
        }
        let sr = f64::from(clip.sample_rate());
        let mut x: Vec<f64> = clip.samples().iter().map(|&s| f64::from(s)).collect();
        if let Some((snr_db, seed)) = self.noise {
            add_noise(&mut x, snr_db, seed);
        }
        if let Some((lo, hi)) = self.band_pass {
            let nyq = sr / 2.0;
            Biquad::high_pass(lo.min(nyq * 0.9), FRAC_1_SQRT_2, sr).process(&mut x);
            Biquad::low_pass(hi.min(nyq * 0.95), FRAC_1_SQRT_2, sr).process(&mut x);
        }
        if let Some(st) = self.semitones {
            x = pitch_shift(&x, st);
        }
        if let Some(seed) = self.phase_seed {
            x = phase_shift(&x, seed);
        }
        if let Some([low, mid, high]) = self.eq_db {
            Biquad::low_shelf(200.0, low, sr).process(&mut x);
            Biquad::peaking(1_000.0, 1.0, mid, sr).process(&mut x);
            Biquad::high_shelf(5_000.0, high, sr).process(&mut x);
        }
        let samples = x.iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
        AudioClip::new(samples, clip.sample_rate()).expect("augmentation keeps samples finite")
    }
}

/// Draws and applies the augmentations selected by `flags`.
pub fn augment<R: Rng + ?Sized>(clip: &AudioClip, flags: AugmentFlags, rng: &mut R) -> AudioClip {
    AugmentParams::sample(flags, &AugmentRanges::default(), rng).apply(clip)
}

/// White Gaussian noise scaled so that signal RMS / noise RMS matches `snr_db`.
fn add_noise(x: &mut [f64], snr_db: f64, seed: u64) {
    let n = x.len() as f64;
    let signal_rms = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / n);
    if signal_rms == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise_rms = libm::sqrt(noise.iter().map(|v| v * v).sum::<f64>() / n);
    let scale = signal_rms / libm::pow(10.0, snr_db / 20.0) / noise_rms;
    for (v, e) in x.iter_mut().zip(&noise) {
        *v += e * scale;
    }
}

/// Resample-based pitch shift; output is trimmed or zero-padded to the input length.
fn pitch_shift(x: &[f64], semitones: f64) -> Vec<f64> {
    if semitones == 0.0 {
        return x.to_vec();
    }
    let ratio = libm::pow(2.0, semitones / 12.0);
    (0..x.len())
        .map(|n| {
            let pos = n as f64 * ratio;
            let i = libm::floor(pos) as usize;
            if i + 1 < x.len() {
                let frac = pos - i as f64;
                x[i] * (1.0 - frac) + x[i + 1] * frac
            } else if i < x.len() {
                x[i]
            } else {
                0.0
            }
        })
        .collect()
}

/// Rotates the phase of every STFT bin by a random but time-constant angle
/// and resynthesizes with weighted overlap-add.
fn phase_shift(x: &[f64], seed: u64) -> Vec<f64> {
    const N: usize = 1024;
    const HOP: usize = N / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rot = vec![Complex::new(1.0, 0.0); N / 2 + 1];
    for r in rot.iter_mut().take(N / 2).skip(1) {
        let a = rng.gen_range(0.0..2.0 * PI);
        *r = Complex::new(libm::cos(a), libm::sin(a));
    }
    let window = super::hann_window(N);
    let fft = Fft::new(N);
    let padded = x.len() + 2 * N;
    let mut out = vec![0.0; padded];
    let mut norm = vec![0.0; padded];
    let mut buf = vec![Complex::default(); N];
    let mut start = 0;
    while start + N <= padded {
        for i in 0..N {
            let idx = start as isize + i as isize - N as isize;
            let s = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
            buf[i] = Complex::new(s * window[i], 0.0);
        }
        fft.forward(&mut buf);
        for k in 0..=N / 2 {
            buf[k] = buf[k] * rot[k];
        }
        for k in 1..N / 2 {
            buf[N - k] = Complex::new(buf[k].re, -buf[k].im);
        }
        fft.inverse_unnormalized(&mut buf);
        for i in 0..N {
            out[start + i] += buf[i].re / N as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
        start += HOP;
    }
    let mut y: Vec<f64> = (0..x.len())
        .map(|i| {
            let j = i + N;
            if norm[j] > 1e-8 { out[j] / norm[j] } else { 0.0 }
        })
        .collect();
    // Decorrelated grains add incoherently and lose energy; restore the input RMS.
    let e_in: f64 = x.iter().map(|v| v * v).sum();
    let e_out: f64 = y.iter().map(|v| v * v).sum();
    if e_out > 0.0 {
        let g = libm::sqrt(e_in / e_out);
        for v in &mut y {
            *v *= g;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_clip(len: usize) -> AudioClip {
        AudioClip::new(
            (0..len)
                .map(|i| 0.2 * libm::sinf(i as f32 * 0.031) + 0.05 * libm::sinf(i as f32 * 0.7))
                .collect(),
            44_100,
        )
        .unwrap()
    }

    #[test]
    fn all_flags_off_is_identity() {
        let clip = test_clip(5000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&clip, AugmentFlags::NONE, &mut rng), clip);
    }

    #[test]
    fn zero_semitones_is_identity() {
        let clip = test_clip(4000);
        let p = AugmentParams {
            semitones: Some(0.0),
            ..AugmentParams::identity()
        };
        assert_eq!(p.apply(&clip), clip);
    }

    #[test]
    fn noise_matches_drawn_snr() {
        let clip = test_clip(20_000);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flags = AugmentFlags {
                noise: true,
                ..AugmentFlags::NONE
            };
            let params = AugmentParams::sample(flags, &AugmentRanges::default(), &mut rng);
            let (snr, _) = params.noise.unwrap();
            let out = params.apply(&clip);
            let diff: f64 = out
                .samples()
                .iter()
                .zip(clip.samples())
                .map(|(a, b)| f64::from(a - b).powi(2))
                .sum::<f64>()
                / clip.len() as f64;
            let measured = 20.0 * libm::log10(clip.rms() / libm::sqrt(diff));
            assert!((measured - snr).abs() < 0.5, "seed {seed}: drew {snr}, measured {measured}");
        }
    }

    #[test]
    fn phase_shift_preserves_noise_energy() {
        // tonal input loses energy where a partial straddles bins with
        // unrelated rotations; broadband input keeps it on average
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clip = AudioClip::new((0..30_000).map(|_| rng.gen_range(-0.3f32..0.3)).collect(), 44_100).unwrap();
        let p = AugmentParams {
            phase_seed: Some(11),
            ..AugmentParams::identity()
        };
        let out = p.apply(&clip);
        let ratio = out.rms() / clip.rms();
        assert!((0.99..1.01).contains(&ratio), "ratio {ratio}");
        assert_ne!(out, clip);
    }

    #[test]
    fn every_combination_preserves_length_and_range() {
        let clip = test_clip(3001);
        for mask in 0u8..32 {
            let flags = AugmentFlags {
                noise: mask & 1 != 0,
                band_pass: mask & 2 != 0,
                pitch_shift: mask & 4 != 0,
                phase_shift: mask & 8 != 0,
                eq: mask & 16 != 0,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(mask));
            let out = augment(&clip, flags, &mut rng);
            assert_eq!(out.len(), clip.len());
            assert!(out.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
        }
    }
}
