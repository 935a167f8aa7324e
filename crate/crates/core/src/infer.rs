//! Generation: the tokenized timbre prompt is an unmasked prefix, the
//! rhythm prompt's length of fully masked frames follows, and codebooks
//! are filled coarse to fine by confidence-ranked iterative unmasking
//! with classifier-free guidance.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, TokenGrid};
use crate::dsp::AudioClip;
use crate::model::{MaskedTransformer, ModelInput};
use crate::rhythm::{RhythmConfig, RhythmExtractor, RhythmFeatureMatrix};
use crate::sched::{cfg_combine, confirm_counts, rank_confidence, GenerationConfig};
use crate::{Error, Fnv64, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub timbre_prompt: AudioClip,
    pub rhythm_prompt: AudioClip,
    pub gen: GenerationConfig,
    pub rhythm: RhythmConfig,
}

impl GenerationRequest {
    pub fn new(timbre_prompt: AudioClip, rhythm_prompt: AudioClip, gen: GenerationConfig, rhythm: RhythmConfig) -> Self {
        GenerationRequest { timbre_prompt, rhythm_prompt, gen, rhythm }
    }

    /// Hash of both prompts and every setting.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        for clip in [&self.timbre_prompt, &self.rhythm_prompt] {
            h.write_u64(u64::from(clip.sample_rate()));
            h.write_u64(clip.len() as u64);
            h.write_f32s(clip.samples());
        }
        let g = &self.gen;
        for &n in &g.iters_per_codebook {
            h.write_u64(n as u64);
        }
        h.write(&g.cfg_weight.to_le_bytes());
        h.write(&g.temperature.to_le_bytes());
        h.write(&g.causal_bias.to_le_bytes());
        h.write_u64(g.seed);
        h.write_u64(g.top_k.map_or(0, |k| k as u64 + 1));
        h.write(&[u8::from(g.include_prefix), u8::from(self.rhythm.adaptive)]);
        h.write_u64(self.rhythm.n_bands as u64);
        h.finish()
    }
}

/// The generation buffer before any decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    pub grid: TokenGrid,
    /// Zero over the prefix, rhythm-prompt features over the suffix.
    pub rhythm: RhythmFeatureMatrix,
    pub prefix_frames: usize,
}

impl Buffer {
    pub fn suffix_frames(&self) -> usize {
        self.grid.frames() - self.prefix_frames
    }
}

pub fn build_buffer<C: Codec + ?Sized>(req: &GenerationRequest, codec: &C) -> Result<Buffer> {
    let extractor = RhythmExtractor::pipeline_default(req.rhythm)?;
    build_buffer_with(req, codec, &extractor)
}

fn build_buffer_with<C: Codec + ?Sized>(req: &GenerationRequest, codec: &C, extractor: &RhythmExtractor) -> Result<Buffer> {
    let hop = codec.hop();
    for clip in [&req.timbre_prompt, &req.rhythm_prompt] {
        if clip.len() < hop {
            return Err(Error::TooShort { len: clip.len(), min: hop });
        }
    }
    let prefix = codec.encode(&req.timbre_prompt)?;
    let suffix_frames = req.rhythm_prompt.len().div_ceil(hop);
    let features = extractor.extract(&req.rhythm_prompt)?;
    if features.frames() != suffix_frames {
        return Err(Error::Shape(alloc::format!(
            "rhythm prompt gives {} feature frames but {suffix_frames} token frames",
            features.frames()
        )));
    }
    let mut suffix = TokenGrid::new(codec.codebooks(), suffix_frames, codec.vocab(), hop)?;
    suffix.mask_frames(0..codec.codebooks(), 0..suffix_frames);
    let prefix_frames = prefix.frames();
    Ok(Buffer {
        grid: prefix.concat(&suffix)?,
        rhythm: features.with_zero_prefix(prefix_frames),
        prefix_frames,
    })
}

/// Cells confirmed by one unmasking iteration.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub codebook: usize,
    pub iteration: usize,
    /// `(frame, token)` in buffer coordinates, in confirmation order.
    pub confirmed: Vec<(usize, u32)>,
    /// Mean sampled-token probability over the cells that were still masked.
    pub mean_confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    pub request_hash: u64,
    pub model_fingerprint: u64,
    pub codec_fingerprint: u64,
    pub seed: u64,
    pub iters_per_codebook: Vec<usize>,
    pub include_prefix: bool,
    pub prefix_frames: usize,
    pub iterations: Vec<IterationRecord>,
    pub final_grid: TokenGrid,
}

impl GenerationTrace {
    /// Checks that every suffix cell was confirmed exactly once, in the
    /// scheduled number of iterations, and agrees with the final grid.
    pub fn validate(&self) -> Result<()> {
        let incomplete = |m: &str| Err(Error::IncompleteTrace(m.to_string()));
        let grid = &self.final_grid;
        if self.iters_per_codebook.len() != grid.codebooks() || self.prefix_frames > grid.frames() {
            return incomplete("schedule or prefix does not fit the final grid");
        }
        if self.iterations.len() != self.iters_per_codebook.iter().sum::<usize>() {
            return incomplete("iteration count differs from the schedule");
        }
        if grid.any_masked() {
            return incomplete("final grid still has masked cells");
        }
        let suffix = grid.frames() - self.prefix_frames;
        let mut records = self.iterations.iter();
        for (c, &iters) in self.iters_per_codebook.iter().enumerate() {
            let mut seen = alloc::vec![false; suffix];
            for _ in 0..iters {
                let r = records.next().expect("count checked above");
                if r.codebook != c {
                    return incomplete("iterations out of coarse-to-fine order");
                }
                for &(t, tok) in &r.confirmed {
                    if t < self.prefix_frames || t >= grid.frames() || seen[t - self.prefix_frames] {
                        return incomplete("confirmed frame outside the suffix or repeated");
                    }
                    seen[t - self.prefix_frames] = true;
                    if grid.token(c, t)? != tok {
                        return incomplete("confirmed token differs from the final grid");
                    }
                }
            }
            if seen.contains(&false) {
                return incomplete("suffix not fully confirmed");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub audio: AudioClip,
    pub trace: GenerationTrace,
}

/// Draws one token from `softmax(logits)`, restricted to the `top_k`
/// largest when given. Returns the token and its probability.
fn sample_token<R: Rng + ?Sized>(logits: &[f32], top_k: Option<usize>, rng: &mut R) -> (u32, f64) {
    let mut allowed: Vec<usize> = (0..logits.len()).collect();
    if let Some(k) = top_k.filter(|&k| k > 0 && k < logits.len()) {
        allowed.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(core::cmp::Ordering::Equal));
        allowed.truncate(k);
        allowed.sort_unstable();
    }
    let max = allowed.iter().fold(f64::NEG_INFINITY, |m, &j| m.max(logits[j] as f64));
    let weights: Vec<f64> = allowed.iter().map(|&j| libm::exp(logits[j] as f64 - max)).collect();
    let z: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * z;
    let mut acc = 0.0;
    for (&j, &w) in allowed.iter().zip(&weights) {
        acc += w;
        if u < acc {
            return (j as u32, w / z);
        }
    }
    let last = allowed.len() - 1;
    (allowed[last] as u32, weights[last] / z)
}

fn decode_output<C: Codec + ?Sized>(codec: &C, grid: &TokenGrid, prefix_frames: usize, include_prefix: bool) -> Result<AudioClip> {
    if include_prefix {
        codec.decode(grid)
    } else {
        codec.decode(&grid.slice_frames(prefix_frames..grid.frames())?)
    }
}

fn check_compatible<C: Codec + ?Sized>(req: &GenerationRequest, model: &MaskedTransformer, codec: &C) -> Result<()> {
    let m = model.config();
    req.gen.validate(codec.codebooks())?;
    if (m.codebooks, m.vocab) != (codec.codebooks(), codec.vocab()) {
        return Err(Error::InvalidArgument(alloc::format!(
            "model predicts {}×{} tokens, codec produces {}×{}",
            m.codebooks,
            m.vocab,
            codec.codebooks(),
            codec.vocab()
        )));
    }
    if req.rhythm.n_bands != m.bands {
        return Err(Error::InvalidArgument(alloc::format!(
            "model expects {} rhythm bands, request has {}",
            m.bands,
            req.rhythm.n_bands
        )));
    }
    Ok(())
}

/// Runs the full coarse-to-fine decoding and decodes the result.
pub fn generate<C: Codec + ?Sized>(req: &GenerationRequest, model: &MaskedTransformer, codec: &C) -> Result<Generation> {
    check_compatible(req, model, codec)?;
    let buffer = build_buffer(req, codec)?;
    if buffer.grid.frames() > model.config().max_frames {
        return Err(Error::InvalidArgument(alloc::format!(
            "buffer of {} frames exceeds the model's {}",
            buffer.grid.frames(),
            model.config().max_frames
        )));
    }
    let gen = &req.gen;
    let Buffer { mut grid, rhythm, prefix_frames } = buffer;
    let total = grid.frames();
    let suffix = total - prefix_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    let mut iterations = Vec::with_capacity(gen.total_iterations());

    for (c, &iters) in gen.iters_per_codebook.iter().enumerate() {
        let quota = confirm_counts(suffix, iters);
        for (i, &count) in quota.iter().enumerate() {
            let cond_in = ModelInput { grid: &grid, rhythm: &rhythm, target_codebook: c, rhythm_dropped: false };
            let uncond_in = ModelInput { rhythm_dropped: true, ..cond_in };
            let cond = model.forward(&cond_in)?;
            let uncond = model.forward(&uncond_in)?;
            let combined = cfg_combine(&cond.values, &uncond.values, gen.cfg_weight)?;
            let vocab = cond.vocab;

            let frames = grid.masked_frames(c);
            let mut tokens = Vec::with_capacity(frames.len());
            let mut probs = Vec::with_capacity(frames.len());
            for &t in &frames {
                let (tok, p) = sample_token(&combined[t * vocab..(t + 1) * vocab], gen.top_k, &mut rng);
                tokens.push(tok);
                probs.push(p);
            }
            let progress = i as f64 / iters.saturating_sub(1).max(1) as f64;
            let order = rank_confidence(&probs, &frames, total, gen.temperature, gen.causal_bias, progress, &mut rng);
            let mut confirmed = Vec::with_capacity(count);
            for &j in order.iter().take(count) {
                grid.confirm(c, frames[j], tokens[j])?;
                confirmed.push((frames[j], tokens[j]));
            }
            let mean_confidence = if probs.is_empty() { 0.0 } else { probs.iter().sum::<f64>() / probs.len() as f64 };
            iterations.push(IterationRecord { codebook: c, iteration: i, confirmed, mean_confidence });
        }
    }

    let audio = decode_output(codec, &grid, prefix_frames, gen.include_prefix)?;
    let trace = GenerationTrace {
        request_hash: req.fingerprint(),
        model_fingerprint: model.fingerprint(),
        codec_fingerprint: codec.fingerprint(),
        seed: gen.seed,
        iters_per_codebook: gen.iters_per_codebook.clone(),
        include_prefix: gen.include_prefix,
        prefix_frames,
        iterations,
        final_grid: grid,
    };
    Ok(Generation { audio, trace })
}

/// Decodes a stored trace again. The model fingerprint and codec must be
/// the ones the trace was produced with.
pub fn resume_trace<C: Codec + ?Sized>(trace: &GenerationTrace, model_fingerprint: u64, codec: &C) -> Result<AudioClip> {
    trace.validate()?;
    if trace.model_fingerprint != model_fingerprint {
        return Err(Error::Fingerprint { what: "model", expected: trace.model_fingerprint, found: model_fingerprint });
    }
    if trace.codec_fingerprint != codec.fingerprint() {
        return Err(Error::Fingerprint { what: "codec", expected: trace.codec_fingerprint, found: codec.fingerprint() });
    }
    decode_output(codec, &trace.final_grid, trace.prefix_frames, trace.include_prefix)
}
