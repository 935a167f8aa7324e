//! Dualized (and N-band) rhythm features.
//!
//! A mel spectrogram is split into `B` contiguous bands, band energies are
//! log-compressed, standardized per band over the excerpt, squashed with a
//! sigmoid and snapped to the 33-level grid `{0, 1/32, ..., 1}`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::dsp::{AudioClip, MelAnalyzer, MelSpectrogram};
use crate::{Error, Result};

/// Number of quantization intervals; values land on `k / QUANT_STEPS`.
pub const QUANT_STEPS: u32 = 32;
/// Additive floor before the log of band energy.
pub const ENERGY_FLOOR: f64 = 1e-10;
pub const MAX_BANDS: usize = 4;

/// Partition of mel bins into contiguous bands.
///
/// `split_bins[q]` is the last bin of band `q`; the final band runs to the
/// top bin.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandSplit {
    split_bins: Vec<usize>,
    n_mels: usize,
    adaptive: bool,
}

impl BandSplit {
    pub fn new(split_bins: Vec<usize>, n_mels: usize, adaptive: bool) -> Result<Self> {
        let ok = split_bins.windows(2).all(|w| w[0] < w[1])
            && split_bins.last().is_none_or(|&s| s + 1 < n_mels)
            && split_bins.len() < MAX_BANDS;
        if !ok {
            return Err(Error::InvalidArgument(alloc::format!(
                "invalid band split {split_bins:?} for {n_mels} bins"
            )));
        }
        Ok(BandSplit {
            split_bins,
            n_mels,
            adaptive,
        })
    }

    pub fn split_bins(&self) -> &[usize] {
        &self.split_bins
    }

    pub fn n_bands(&self) -> usize {
        self.split_bins.len() + 1
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn is_adaptive(&self) -> bool {
        self.adaptive
    }

    /// Bin ranges of each band, covering `0..n_mels` without gaps.
    pub fn band_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.n_bands());
        let mut lo = 0;
        for &s in &self.split_bins {
            out.push(lo..s + 1);
            lo = s + 1;
        }
        out.push(lo..self.n_mels);
        out
    }
}

fn check_bands(n_bands: usize) -> Result<()> {
    if (1..=MAX_BANDS).contains(&n_bands) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!(
            "band count must be in 1..=4, got {n_bands}"
        )))
    }
}

/// Equal-width partition: splits at `floor(n_mels * q / B) - 1`.
pub fn fixed_split(n_mels: usize, n_bands: usize) -> Result<BandSplit> {
    check_bands(n_bands)?;
    if n_mels < n_bands {
        return Err(Error::InvalidArgument("fewer mel bins than bands".into()));
    }
    let splits = (1..n_bands).map(|q| n_mels * q / n_bands - 1).collect();
    BandSplit::new(splits, n_mels, false)
}

/// Energy-balanced split from per-bin totals.
///
/// Split `q` is the first bin at which cumulative energy reaches `q / B` of
/// the total; that bin joins the lower band. When several quantiles land
/// on one bin the later splits are pushed up so every band keeps at least
/// one bin. All-zero input falls back to [`fixed_split`].
pub fn adaptive_split_from_totals(totals: &[f64], n_bands: usize) -> Result<BandSplit> {
    check_bands(n_bands)?;
    let n = totals.len();
    if n < n_bands {
        return Err(Error::InvalidArgument("fewer mel bins than bands".into()));
    }
    let total: f64 = totals.iter().sum();
    if total <= 0.0 {
        let mut s = fixed_split(n, n_bands)?;
        s.adaptive = true;
        return Ok(s);
    }
    let mut splits = Vec::with_capacity(n_bands - 1);
    let mut cum = 0.0;
    let mut q = 1;
    for (k, &e) in totals.iter().enumerate() {
        cum += e;
        while q < n_bands && cum * n_bands as f64 >= q as f64 * total {
            splits.push(k);
            q += 1;
        }
        if q == n_bands {
            break;
        }
    }
    // Guard against float shortfall in the final comparison.
    while splits.len() < n_bands - 1 {
        splits.push(n - 1);
    }
    for i in 0..splits.len() {
        let floor = if i == 0 { 0 } else { splits[i - 1] + 1 };
        let ceiling = n - 1 - (splits.len() - i);
        splits[i] = splits[i].max(floor).min(ceiling);
    }
    BandSplit::new(splits, n, true)
}

/// Energy-balanced split of a mel spectrogram, using energy summed over
/// the whole excerpt.
pub fn adaptive_split(mel: &MelSpectrogram, n_bands: usize) -> Result<BandSplit> {
    adaptive_split_from_totals(&mel.band_totals(), n_bands)
}

/// Rounds to the nearest grid value `k/32` (ties up), clamped to `[0, 1]`.
pub fn quantize(v: f64) -> f64 {
    let k = libm::floor(v * f64::from(QUANT_STEPS) + 0.5).clamp(0.0, f64::from(QUANT_STEPS));
    k / f64::from(QUANT_STEPS)
}

pub fn is_on_grid(v: f64) -> bool {
    let k = v * f64::from(QUANT_STEPS);
    (0.0..=f64::from(QUANT_STEPS)).contains(&k) && libm::floor(k) == k
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// `B × T` rhythm features, row-major by band.
#[derive(Clone, Debug, PartialEq)]
pub struct RhythmFeatureMatrix {
    n_bands: usize,
    frames: usize,
    values: Vec<f64>,
    quantized: bool,
}

impl RhythmFeatureMatrix {
    pub fn new(n_bands: usize, frames: usize, values: Vec<f64>, quantized: bool) -> Result<Self> {
        check_bands(n_bands)?;
        if values.len() != n_bands * frames {
            return Err(Error::Shape(alloc::format!(
                "rhythm matrix has {} values, expected {n_bands}x{frames}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("rhythm values must be finite".into()));
        }
        if quantized && !values.iter().all(|&v| is_on_grid(v)) {
            return Err(Error::InvalidArgument("quantized rhythm values must lie on the k/32 grid".into()));
        }
        Ok(RhythmFeatureMatrix {
            n_bands,
            frames,
            values,
            quantized,
        })
    }

    /// All-zero features (the unconditional / dropped input).
    pub fn zeros(n_bands: usize, frames: usize) -> Self {
        RhythmFeatureMatrix {
            n_bands,
            frames,
            values: vec![0.0; n_bands * frames],
            quantized: true,
        }
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_quantized(&self) -> bool {
        self.quantized
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.values[band * self.frames..(band + 1) * self.frames]
    }

    /// Features of one frame across bands.
    pub fn frame(&self, frame: usize) -> Vec<f64> {
        (0..self.n_bands).map(|b| self.get(b, frame)).collect()
    }

    /// Copy with `prefix` zero frames prepended.
    pub fn with_zero_prefix(&self, prefix: usize) -> Self {
        let frames = prefix + self.frames;
        let mut values = vec![0.0; self.n_bands * frames];
        for b in 0..self.n_bands {
            values[b * frames + prefix..(b + 1) * frames].copy_from_slice(self.band(b));
        }
        RhythmFeatureMatrix {
            n_bands: self.n_bands,
            frames,
            values,
            quantized: self.quantized,
        }
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        let mut values = Vec::with_capacity(self.n_bands * len);
        for b in 0..self.n_bands {
            values.extend_from_slice(&self.band(b)[start..start + len]);
        }
        RhythmFeatureMatrix {
            n_bands: self.n_bands,
            frames: len,
            values,
            quantized: self.quantized,
        }
    }
}

/// Feature settings; must match the model's band count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct RhythmConfig {
    pub n_bands: usize,
    pub adaptive: bool,
    /// Log-compress band energies before standardizing.
    pub log_compress: bool,
    pub quantize: bool,
}

impl Default for RhythmConfig {
    fn default() -> Self {
        RhythmConfig {
            n_bands: 2,
            adaptive: true,
            log_compress: true,
            quantize: true,
        }
    }
}

impl RhythmConfig {
    pub fn with_bands(n_bands: usize, adaptive: bool) -> Self {
        RhythmConfig {
            n_bands,
            adaptive,
            ..Self::default()
        }
    }
}

/// Turns a mel spectrogram into rhythm features, returning the split used.
pub fn features_from_mel(mel: &MelSpectrogram, config: &RhythmConfig) -> Result<(RhythmFeatureMatrix, BandSplit)> {
    let split = if config.adaptive {
        adaptive_split(mel, config.n_bands)?
    } else {
        fixed_split(mel.n_mels(), config.n_bands)?
    };
    let t = mel.frames();
    let b = split.n_bands();
    let mut values = vec![0.0; b * t];
    for (band, range) in split.band_ranges().into_iter().enumerate() {
        let row = &mut values[band * t..(band + 1) * t];
        for (f, slot) in row.iter_mut().enumerate() {
            let e: f64 = range.clone().map(|m| mel.get(m, f)).sum();
            *slot = if config.log_compress { libm::log(e + ENERGY_FLOOR) } else { e };
        }
        standardize(row);
        for v in row.iter_mut() {
            let s = sigmoid(*v);
            *v = if config.quantize { quantize(s) } else { s };
        }
    }
    Ok((
        RhythmFeatureMatrix {
            n_bands: b,
            frames: t,
            values,
            quantized: config.quantize,
        },
        split,
    ))
}

/// Zero mean, unit (population) variance; a constant row becomes all zeros.
fn standardize(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if std <= 1e-12 * mean.abs().max(1.0) {
        row.iter_mut().for_each(|v| *v = 0.0);
    } else {
        row.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Reusable extractor (keeps the FFT plan and filterbank).
#[derive(Clone, Debug)]
pub struct RhythmExtractor {
    mel: MelAnalyzer,
    config: RhythmConfig,
}

impl RhythmExtractor {
    pub fn new(mel: MelAnalyzer, config: RhythmConfig) -> Result<Self> {
        check_bands(config.n_bands)?;
        Ok(RhythmExtractor { mel, config })
    }

    pub fn pipeline_default(config: RhythmConfig) -> Result<Self> {
        Self::new(MelAnalyzer::pipeline_default(), config)
    }

    pub fn config(&self) -> &RhythmConfig {
        &self.config
    }

    pub fn extract_with_split(&self, clip: &AudioClip) -> Result<(RhythmFeatureMatrix, BandSplit)> {
        if clip.is_empty() {
            return Err(Error::EmptyClip);
        }
        features_from_mel(&self.mel.compute(clip), &self.config)
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<RhythmFeatureMatrix> {
        Ok(self.extract_with_split(clip)?.0)
    }
}

/// Rhythm features of `clip` with the pipeline's mel settings.
pub fn extract(clip: &AudioClip, n_bands: usize, adaptive: bool) -> Result<RhythmFeatureMatrix> {
    RhythmExtractor::pipeline_default(RhythmConfig::with_bands(n_bands, adaptive))?.extract(clip)
}
