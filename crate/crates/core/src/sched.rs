//! Masking schedules, confidence ranking and classifier-free guidance.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::ops::Range;

use rand::Rng;
use rand_distr::Gumbel;

use crate::util::round_half_away;
use crate::{Error, Result};

/// Fraction of cells still masked at progress `r ∈ [0, 1]`: `cos(π r / 2)`.
pub fn cosine_ratio(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(alloc::format!(
            "schedule progress {r} outside [0, 1]"
        )));
    }
    Ok(libm::cos(FRAC_PI_2 * r))
}

/// Cells masked in one training example: a single codebook, a contiguous
/// span, and a subset of frames inside it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub codebook: usize,
    pub span: Range<usize>,
    /// Sorted, distinct, inside `span`.
    pub masked_frames: Vec<usize>,
}

impl MaskPlan {
    pub fn span_len(&self) -> usize {
        self.span.end - self.span.start
    }
}

/// Inclusive bounds `[ceil(T/2), floor(3T/4)]` on the span length.
pub fn span_bounds(frames: usize) -> (usize, usize) {
    (frames.div_ceil(2), frames * 3 / 4)
}

/// Samples the codebook uniformly, the span length uniformly within
/// [`span_bounds`], the span start uniformly, then masks
/// `ceil(cos(π r / 2) · len)` frames of the span chosen without replacement,
/// with `r ~ U[0, 1)`.
pub fn sample_training_mask<R: Rng + ?Sized>(frames: usize, codebooks: usize, rng: &mut R) -> Result<MaskPlan> {
    if frames < 2 {
        return Err(Error::InvalidArgument("training masks need at least 2 frames".into()));
    }
    if codebooks == 0 {
        return Err(Error::InvalidArgument("no codebooks".into()));
    }
    let codebook = rng.gen_range(0..codebooks);
    let (lo, hi) = span_bounds(frames);
    let len = rng.gen_range(lo..=hi);
    let start = rng.gen_range(0..=frames - len);
    let r: f64 = rng.gen_range(0.0..1.0);
    let ratio = cosine_ratio(r)?;
    let n = (libm::ceil(ratio * len as f64) as usize).clamp(1, len);
    let mut masked_frames: Vec<usize> = rand::seq::index::sample(rng, len, n)
        .into_iter()
        .map(|i| start + i)
        .collect();
    masked_frames.sort_unstable();
    Ok(MaskPlan {
        codebook,
        span: start..start + len,
        masked_frames,
    })
}

/// Cells still masked after iteration `i` (0-based) of `iters`:
/// `round(cos(π (i+1) / (2 iters)) · n)`, forced to zero on the last one.
pub fn remaining_after(n_masked: usize, iters: usize, i: usize) -> usize {
    if i + 1 >= iters {
        return 0;
    }
    let ratio = libm::cos(FRAC_PI_2 * (i + 1) as f64 / iters as f64);
    round_half_away(ratio * n_masked as f64) as usize
}

/// How many cells to confirm at each of `iters` iterations.
pub fn confirm_counts(n_masked: usize, iters: usize) -> Vec<usize> {
    assert!(iters >= 1, "at least one iteration");
    let mut prev = n_masked;
    (0..iters)
        .map(|i| {
            let rem = remaining_after(n_masked, iters, i).min(prev);
            let c = prev - rem;
            prev = rem;
            c
        })
        .collect()
}

/// Orders candidate frames for confirmation, most confident first.
///
/// `score = ln p + temperature · (1 − progress) · g + bias · (1 − frame / total)`
/// with `g` i.i.d. standard Gumbel. One Gumbel value is drawn per candidate
/// even when the temperature is zero. Ties keep input order. Returns
/// indices into `probs`.
pub fn rank_confidence<R: Rng + ?Sized>(
    probs: &[f64],
    frame_idx: &[usize],
    total_frames: usize,
    temperature: f64,
    causal_bias: f64,
    progress: f64,
    rng: &mut R,
) -> Vec<usize> {
    assert_eq!(probs.len(), frame_idx.len());
    let noise_scale = temperature * (1.0 - progress.clamp(0.0, 1.0));
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");
    let scores: Vec<f64> = probs
        .iter()
        .zip(frame_idx)
        .map(|(&p, &t)| {
            let g: f64 = rng.sample(gumbel);
            let pos = 1.0 - t as f64 / total_frames.max(1) as f64;
            libm::log(p) + noise_scale * g + causal_bias * pos
        })
        .collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(core::cmp::Ordering::Equal));
    order
}

/// `uncond + w · (cond − uncond)`; returns the conditional (or
/// unconditional) logits unchanged for `w = 1` (or `w = 0`).
pub fn cfg_combine(cond: &[f32], uncond: &[f32], weight: f32) -> Result<Vec<f32>> {
    if cond.len() != uncond.len() {
        return Err(Error::Shape(alloc::format!(
            "conditional logits have {} values, unconditional {}",
            cond.len(),
            uncond.len()
        )));
    }
    if weight == 1.0 {
        return Ok(cond.to_vec());
    }
    if weight == 0.0 {
        return Ok(uncond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| u + weight * (c - u))
        .collect())
}

/// Iterative decoding settings.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GenerationConfig {
    /// Unmasking iterations per codebook, coarse to fine.
    pub iters_per_codebook: Vec<usize>,
    pub cfg_weight: f32,
    pub temperature: f64,
    pub causal_bias: f64,
    pub seed: u64,
    /// Restrict token sampling to the `k` most likely tokens.
    pub top_k: Option<usize>,
    /// Return the decoded prefix along with the generated continuation.
    pub include_prefix: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            iters_per_codebook: alloc::vec![8, 8, 8, 8, 8, 4, 4, 4, 4],
            cfg_weight: 2.0,
            temperature: 10.0,
            causal_bias: 1.0,
            seed: 0,
            top_k: None,
            include_prefix: false,
        }
    }
}

impl GenerationConfig {
    pub fn total_iterations(&self) -> usize {
        self.iters_per_codebook.iter().sum()
    }

    pub fn validate(&self, codebooks: usize) -> Result<()> {
        if self.iters_per_codebook.len() != codebooks {
            return Err(Error::InvalidArgument(alloc::format!(
                "schedule lists {} codebooks, codec has {codebooks}",
                self.iters_per_codebook.len()
            )));
        }
        if self.iters_per_codebook.contains(&0) {
            return Err(Error::InvalidArgument("every codebook needs at least one iteration".into()));
        }
        if !(self.temperature >= 0.0 && self.causal_bias >= 0.0 && self.cfg_weight.is_finite()) {
            return Err(Error::InvalidArgument(
                "temperature and causal bias must be nonnegative, CFG weight finite".into(),
            ));
        }
        if self.top_k == Some(0) {
            return Err(Error::InvalidArgument("top_k must be positive".into()));
        }
        Ok(())
    }
}
