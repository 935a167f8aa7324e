//! Objective metrics: band-limited onset detection and F1, MFCC cosine
//! similarity, and kernel audio distance over clip embeddings.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dsp::{AudioClip, MfccAnalyzer, Stft};
use crate::{Error, Result};

/// Strictly increasing, non-negative onset times in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OnsetList(Vec<f64>);

impl OnsetList {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument("onset times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("onset times must be strictly increasing".into()));
        }
        Ok(OnsetList(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum OnsetBand {
    /// Below 150 Hz (kick).
    Low,
    /// 150 Hz to 8 kHz (snare).
    High,
}

impl OnsetBand {
    pub fn range_hz(self) -> (f64, f64) {
        match self {
            OnsetBand::Low => (0.0, 150.0),
            OnsetBand::High => (150.0, 8000.0),
        }
    }
}

/// Half-wave-rectified spectral flux detector with peak picking.
#[derive(Clone, Debug)]
pub struct OnsetDetector {
    stft: Stft,
    sample_rate: u32,
    /// Peaks must reach this fraction of the clip's largest flux.
    pub relative_threshold: f64,
    /// Absolute flux floor per band bin; keeps noise-only clips empty.
    pub floor_per_bin: f64,
    /// Peak-picking half-window, frames.
    pub peak_window: usize,
    /// Onsets closer than this (seconds) merge into the earlier one.
    pub min_gap: f64,
}

impl OnsetDetector {
    pub fn new(n_fft: usize, hop: usize, sample_rate: u32) -> Self {
        OnsetDetector {
            stft: Stft::new(n_fft, hop),
            sample_rate,
            relative_threshold: 0.1,
            floor_per_bin: 0.1,
            peak_window: 4,
            min_gap: 0.05,
        }
    }

    pub fn pipeline_default() -> Self {
        Self::new(2048, 256, crate::SAMPLE_RATE)
    }

    fn bins(&self, band: OnsetBand) -> core::ops::Range<usize> {
        let (lo, hi) = band.range_hz();
        let width = f64::from(self.sample_rate) / self.stft.n_fft() as f64;
        let first = libm::ceil(lo / width) as usize;
        let last = (libm::floor(hi / width) as usize).min(self.stft.n_bins() - 1);
        first..last + 1
    }

    /// Flux per frame: summed positive magnitude increase within the band.
    pub fn flux(&self, clip: &AudioClip, band: OnsetBand) -> Vec<f64> {
        let (frames, mag) = self.stft.magnitude(clip.samples());
        let nb = self.stft.n_bins();
        let bins = self.bins(band);
        (0..frames)
            .map(|t| {
                bins.clone()
                    .map(|k| {
                        let prev = if t == 0 { 0.0 } else { mag[(t - 1) * nb + k] };
                        (mag[t * nb + k] - prev).max(0.0)
                    })
                    .sum()
            })
            .collect()
    }

    pub fn detect(&self, clip: &AudioClip, band: OnsetBand) -> OnsetList {
        let flux = self.flux(clip, band);
        let max = flux.iter().copied().fold(0.0, f64::max);
        let thresh = (self.relative_threshold * max).max(self.floor_per_bin * self.bins(band).len() as f64);
        let hop = self.stft.hop() as f64;
        let sr = f64::from(self.sample_rate);
        let mut times: Vec<f64> = Vec::new();
        for t in 0..flux.len() {
            let lo = t.saturating_sub(self.peak_window);
            let hi = (t + self.peak_window + 1).min(flux.len());
            let is_peak = flux[lo..hi].iter().enumerate().all(|(i, &v)| v < flux[t] || (v == flux[t] && lo + i >= t));
            if flux[t] < thresh || flux[t] == 0.0 || !is_peak {
                continue;
            }
            // the flux peak leads the onset by about half a hop
            let time = (t as f64 * hop + hop) / sr;
            if times.last().is_none_or(|&p| time - p >= self.min_gap) {
                times.push(time);
            }
        }
        OnsetList(times)
    }
}

/// Onsets in `band` with the default detector.
pub fn detect_onsets(clip: &AudioClip, band: OnsetBand) -> OnsetList {
    OnsetDetector::pipeline_default().detect(clip, band)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Size of the maximum one-to-one matching with `|r − e| ≤ tol`.
pub fn count_matches(reference: &[f64], estimate: &[f64], tol: f64) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < reference.len() && j < estimate.len() {
        let (r, e) = (reference[i], estimate[j]);
        if (r - e).abs() <= tol {
            n += 1;
            i += 1;
            j += 1;
        } else if e < r {
            j += 1;
        } else {
            i += 1;
        }
    }
    n
}

/// Precision, recall and F1 under one-to-one matching within `tol` seconds.
/// Two empty lists score 1; one empty list scores 0.
pub fn onset_f1(reference: &OnsetList, estimate: &OnsetList, tol: f64) -> Result<F1Score> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument("onset tolerance must be non-negative".into()));
    }
    let (nr, ne) = (reference.len(), estimate.len());
    if nr == 0 && ne == 0 {
        return Ok(F1Score { precision: 1.0, recall: 1.0, f1: 1.0 });
    }
    if nr == 0 || ne == 0 {
        return Ok(F1Score { precision: 0.0, recall: 0.0, f1: 0.0 });
    }
    let m = count_matches(reference.times(), estimate.times(), tol) as f64;
    let precision = m / ne as f64;
    let recall = m / nr as f64;
    let f1 = if m == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(F1Score { precision, recall, f1 })
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(alloc::format!("cosine of {} and {} values", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of time-averaged MFCC vectors.
pub fn mfcc_cosine(a: &AudioClip, b: &AudioClip) -> Result<f64> {
    let m = MfccAnalyzer::pipeline_default();
    cosine(&m.timeavg(a).coeffs, &m.timeavg(b).coeffs)
}

/// Maps a clip to a fixed-width vector for distribution distances.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>>;
}

/// Per-coefficient mean and standard deviation of MFCC frames.
#[derive(Clone, Debug)]
pub struct MfccStats(pub MfccAnalyzer);

impl Default for MfccStats {
    fn default() -> Self {
        MfccStats(MfccAnalyzer::pipeline_default())
    }
}

impl Embedder for MfccStats {
    fn dim(&self) -> usize {
        2 * self.0.n_coeffs()
    }

    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let (t, frames) = self.0.frames(clip);
        let n = self.0.n_coeffs();
        if t == 0 {
            return Err(Error::EmptyClip);
        }
        let mut out = vec![0.0; 2 * n];
        for k in 0..n {
            let mean = (0..t).map(|f| frames[f * n + k]).sum::<f64>() / t as f64;
            let var = (0..t).map(|f| (frames[f * n + k] - mean) * (frames[f * n + k] - mean)).sum::<f64>() / t as f64;
            out[k] = mean;
            out[n + k] = libm::sqrt(var);
        }
        Ok(out)
    }
}

/// `n × dim` embedding matrix with a source label.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub tag: String,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(tag: impl Into<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || !vectors.len().is_multiple_of(dim) {
            return Err(Error::Shape(alloc::format!("{} values do not split into rows of {dim}", vectors.len())));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding value".into()));
        }
        Ok(EmbeddingSet { tag: tag.into(), dim, vectors })
    }

    pub fn embed_all<E: Embedder + ?Sized>(tag: impl Into<String>, embedder: &E, clips: &[AudioClip]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(clips.len() * embedder.dim());
        for c in clips {
            vectors.extend(embedder.embed(c)?);
        }
        Self::new(tag, embedder.dim(), vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Polynomial kernel `(x·y / D + 1)³`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let v = dot / d + 1.0;
    v * v * v
}

/// Kernel audio distance: unbiased MMD² with [`poly_kernel`], times 100.
pub fn kad(generated: &EmbeddingSet, reference: &EmbeddingSet) -> Result<f64> {
    if generated.dim != reference.dim {
        return Err(Error::Shape(alloc::format!("embedding widths {} and {}", generated.dim, reference.dim)));
    }
    let (m, n) = (generated.len(), reference.len());
    if m < 2 || n < 2 {
        return Err(Error::InvalidArgument("kad needs at least two embeddings per set".into()));
    }
    let within = |s: &EmbeddingSet| -> f64 {
        let k = s.len();
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    sum += poly_kernel(s.row(i), s.row(j));
                }
            }
        }
        sum / (k * (k - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += poly_kernel(generated.row(i), reference.row(j));
        }
    }
    cross /= (m * n) as f64;
    Ok(100.0 * (within(generated) + within(reference) - 2.0 * cross))
}

/// Mean and percentile bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn excludes_zero(&self) -> bool {
        self.low > 0.0 || self.high < 0.0
    }
}

/// Percentile bootstrap of the mean with `resamples` draws at the given
/// two-sided `confidence`.
pub fn bootstrap_mean<R: Rng + ?Sized>(values: &[f64], resamples: usize, confidence: f64, rng: &mut R) -> Result<Interval> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs values and resamples".into()));
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::InvalidArgument("confidence must lie in [0, 1)".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let at = |q: f64| means[libm::round(q * (resamples - 1) as f64) as usize];
    Ok(Interval { mean, low: at(alpha), high: at(1.0 - alpha) })
}

/// Per-generation scores: onset agreement with the rhythm prompt and
/// MFCC similarity to the rhythm prompt, timbre prompt and a random clip.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClipScores {
    pub f1_low_30: f64,
    pub f1_low_100: f64,
    pub f1_high_30: f64,
    pub f1_high_100: f64,
    pub mfcc_rhythm: f64,
    pub mfcc_timbre: f64,
    pub mfcc_random: f64,
}

pub fn score_clip(generation: &AudioClip, rhythm: &AudioClip, timbre: &AudioClip, random: &AudioClip) -> Result<ClipScores> {
    let det = OnsetDetector::pipeline_default();
    let f1 = |band, tol| -> Result<f64> { Ok(onset_f1(&det.detect(rhythm, band), &det.detect(generation, band), tol)?.f1) };
    let m = MfccAnalyzer::pipeline_default();
    let g = m.timeavg(generation).coeffs;
    Ok(ClipScores {
        f1_low_30: f1(OnsetBand::Low, 0.03)?,
        f1_low_100: f1(OnsetBand::Low, 0.1)?,
        f1_high_30: f1(OnsetBand::High, 0.03)?,
        f1_high_100: f1(OnsetBand::High, 0.1)?,
        mfcc_rhythm: cosine(&g, &m.timeavg(rhythm).coeffs)?,
        mfcc_timbre: cosine(&g, &m.timeavg(timbre).coeffs)?,
        mfcc_random: cosine(&g, &m.timeavg(random).coeffs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn list(t: &[f64]) -> OnsetList {
        OnsetList::new(t.to_vec()).unwrap()
    }

    /// Exhaustive maximum matching over all assignments.
    fn brute_matches(r: &[f64], e: &[f64], tol: f64) -> usize {
        fn go(r: &[f64], e: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
            let Some((&first, rest)) = r.split_first() else { return 0 };
            let mut best = go(rest, e, used, tol);
            for j in 0..e.len() {
                if !used[j] && (first - e[j]).abs() <= tol {
                    used[j] = true;
                    best = best.max(1 + go(rest, e, used, tol));
                    used[j] = false;
                }
            }
            best
        }
        go(r, e, &mut vec![false; e.len()], tol)
    }

    #[test]
    fn worked_examples() {
        let s = onset_f1(&list(&[0.0, 0.5, 1.0]), &list(&[0.02, 0.52, 1.2]), 0.03).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0));
        let s = onset_f1(&list(&[0.0]), &list(&[0.0, 0.01, 0.02]), 0.03).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0 / 3.0, 1.0, 0.5));
        let a = list(&[0.1, 0.7]);
        assert_eq!(onset_f1(&a, &a, 0.0).unwrap().f1, 1.0);
        assert_eq!(onset_f1(&list(&[]), &list(&[]), 0.03).unwrap().f1, 1.0);
        assert_eq!(onset_f1(&a, &list(&[]), 0.03).unwrap().f1, 0.0);
        assert!(onset_f1(&a, &a, -0.1).is_err());
        assert!(OnsetList::new(vec![0.2, 0.2]).is_err());
    }

    #[test]
    fn greedy_matches_brute_force_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3000 {
            let draw = |rng: &mut ChaCha8Rng| {
                let n = rng.gen_range(0..=6);
                let mut v: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..40) as f64) * 0.01).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            };
            let r = draw(&mut rng);
            let e = draw(&mut rng);
            let tol = [0.0, 0.01, 0.03, 0.1][rng.gen_range(0..4)];
            assert_eq!(count_matches(&r, &e, tol), brute_matches(&r, &e, tol), "{r:?} {e:?} {tol}");
        }
    }

    fn clicks(times: &[f64], len: usize, gain: f32) -> AudioClip {
        let mut x = vec![0.0f32; len];
        for &t in times {
            let s = (t * 44_100.0) as usize;
            for i in 0..2000.min(len - s) {
                let env = libm::expf(-(i as f32) / 400.0);
                x[s + i] += gain * env * libm::sinf(2.0 * core::f32::consts::PI * 60.0 * i as f32 / 44_100.0)
                    + gain * 0.3 * env * libm::sinf(i as f32 * 1.3);
            }
        }
        AudioClip::new(x, 44_100).unwrap()
    }

    #[test]
    fn silence_has_no_onsets() {
        let silent = AudioClip::silence(44_100, 44_100).unwrap();
        assert!(detect_onsets(&silent, OnsetBand::Low).is_empty());
        assert!(detect_onsets(&silent, OnsetBand::High).is_empty());
    }

    #[test]
    fn click_train_is_found_within_a_frame() {
        let truth = [0.25, 0.75, 1.25, 1.75];
        let clip = clicks(&truth, 2 * 44_100, 0.8);
        for band in [OnsetBand::Low, OnsetBand::High] {
            let got = detect_onsets(&clip, band);
            assert_eq!(got.len(), 4, "{band:?}: {got:?}");
            for (g, t) in got.times().iter().zip(truth) {
                assert!((g - t).abs() <= 256.0 / 44_100.0 + 0.005, "{band:?}: {g} vs {t}");
            }
        }
    }

    #[test]
    fn detection_is_gain_invariant() {
        let clip = clicks(&[0.1, 0.4, 0.9], 44_100, 1.0);
        let base = detect_onsets(&clip, OnsetBand::Low);
        for g in [0.1f32, 0.25, 0.5] {
            assert_eq!(detect_onsets(&clip.scaled(g), OnsetBand::Low), base);
        }
    }

    #[test]
    fn kad_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..40).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let sa = EmbeddingSet::new("a", 4, a.clone()).unwrap();
        let sb = EmbeddingSet::new("b", 4, b).unwrap();
        assert!(kad(&sa, &sa).unwrap() <= 1e-9);
        assert!((kad(&sa, &sb).unwrap() - kad(&sb, &sa).unwrap()).abs() < 1e-12);
        let mut rows: Vec<&[f64]> = a.chunks(4).collect();
        rows.reverse();
        let perm = EmbeddingSet::new("p", 4, rows.concat()).unwrap();
        assert!((kad(&perm, &sb).unwrap() - kad(&sa, &sb).unwrap()).abs() < 1e-9);
        assert!(kad(&sa, &EmbeddingSet::new("c", 2, vec![0.0; 4]).unwrap()).is_err());
    }

    #[test]
    fn kad_grows_with_point_mass_separation() {
        // two-point sets at 0 and d along one axis; closed form below
        let expect = |d: f64| 100.0 * (1.0 + libm::pow(d * d / 2.0 + 1.0, 3.0) - 2.0);
        let mut prev = f64::NEG_INFINITY;
        for d in [0.1, 1.0, 10.0] {
            let a = EmbeddingSet::new("a", 2, vec![0.0; 4]).unwrap();
            let b = EmbeddingSet::new("b", 2, vec![d, 0.0, d, 0.0]).unwrap();
            let v = kad(&a, &b).unwrap();
            assert!((v - expect(d)).abs() < 1e-9 * expect(d).abs().max(1.0));
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn mfcc_cosine_basics() {
        let a = clicks(&[0.1], 20_000, 0.5);
        let b = clicks(&[0.2, 0.3], 20_000, 0.5);
        assert!((mfcc_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mfcc_cosine(&a, &b).unwrap(), mfcc_cosine(&b, &a).unwrap());
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm));
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..200).map(|_| rng.gen_range(0.5..1.5)).collect();
        let ci = bootstrap_mean(&v, 1000, 0.95, &mut rng).unwrap();
        assert!(ci.low < ci.mean && ci.mean < ci.high);
        assert!(ci.excludes_zero());
        assert!(ci.high - ci.low < 0.2);
    }
}
