//! Stage drivers shared by the command line and the end-to-end tests.

use std::path::Path;

use gesture_drums_core::codec::{train_codec, Codec, CodecStepStats, NeuralCodec, TokenGrid};
use gesture_drums_core::dsp::AudioClip;
use gesture_drums_core::infer::{generate, Generation, GenerationRequest};
use gesture_drums_core::model::MaskedTransformer;
use gesture_drums_core::sched::GenerationConfig;
use gesture_drums_core::train::{train_loop, StepReport, TrainingClip};
use gesture_drums_core::{Fnv64, SAMPLE_RATE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::report::parallel_map;

/// Environment variable naming the directory for cached token grids.
pub const CACHE_ENV: &str = "GDRUMS_CACHE_DIR";

pub fn train_codec_stage(clips: &[AudioClip], cfg: &PipelineConfig, on_step: impl FnMut(&CodecStepStats)) -> Result<NeuralCodec> {
    Ok(train_codec(clips, cfg.codec.clone(), cfg.codec_train, on_step)?)
}

fn clip_hash(clip: &AudioClip) -> u64 {
    let mut h = Fnv64::default();
    h.write_u64(u64::from(clip.sample_rate()));
    h.write_f32s(clip.samples());
    h.finish()
}

fn read_cached(path: &Path, codec: &NeuralCodec, frames: usize) -> Option<TokenGrid> {
    let bytes = std::fs::read(path).ok()?;
    let tokens: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    TokenGrid::from_tokens(codec.codebooks(), frames, codec.vocab(), codec.hop(), tokens).ok()
}

/// Encodes every clip, reusing grids cached under `cache_dir` when given.
/// Cache entries are keyed by codec fingerprint and clip content.
pub fn encode_corpus(clips: &[AudioClip], codec: &NeuralCodec, cache_dir: Option<&Path>) -> Result<Vec<TrainingClip>> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::data(format!("{}: {e}", dir.display())))?;
    }
    let fp = codec.fingerprint();
    let grids = parallel_map(clips.len(), |i| -> Result<TokenGrid> {
        let clip = &clips[i];
        let frames = clip.len().div_ceil(codec.hop());
        let path = cache_dir.map(|d| d.join(format!("tokens-{fp:016x}-{:016x}.bin", clip_hash(clip))));
        if let Some(grid) = path.as_deref().and_then(|p| read_cached(p, codec, frames)) {
            return Ok(grid);
        }
        let grid = codec.encode(clip)?;
        if let Some(p) = path {
            let bytes: Vec<u8> = grid.raw_tokens().iter().flat_map(|t| t.to_le_bytes()).collect();
            std::fs::write(&p, bytes).map_err(|e| Error::data(format!("{}: {e}", p.display())))?;
        }
        Ok(grid)
    });
    clips
        .iter()
        .zip(grids)
        .map(|(clip, grid)| Ok(TrainingClip { audio: clip.clone(), tokens: grid? }))
        .collect()
}

pub fn cache_dir_from_env() -> Option<std::path::PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(Into::into)
}

/// Initializes a model from the config's train seed and trains it.
pub fn train_model_stage(
    corpus: &[TrainingClip],
    cfg: &PipelineConfig,
    on_step: impl FnMut(&StepReport, &MaskedTransformer),
) -> Result<MaskedTransformer> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x6d6f_6465_6c00);
    let model = MaskedTransformer::init(cfg.model.clone(), &mut rng)?;
    Ok(train_loop(corpus, model, cfg.train.clone(), cfg.features, cfg.codec.hop, SAMPLE_RATE, on_step)?)
}

/// Checks that checkpoints and config agree before any heavy work.
pub fn preflight(cfg: &PipelineConfig, model: &MaskedTransformer, codec: &dyn Codec) -> Result<()> {
    let m = model.config();
    let pairs = [
        ("model.codebooks", m.codebooks, "codec.codebooks", codec.codebooks()),
        ("model.vocab", m.vocab, "codec.codebook_size", codec.vocab()),
        ("model.bands", m.bands, "features.n_bands", cfg.features.n_bands),
        ("codec.hop", codec.hop(), "feature hop", crate::config::FEATURE_HOP),
        ("generation schedule length", cfg.generation.iters_per_codebook.len(), "codec.codebooks", codec.codebooks()),
    ];
    for (a, va, b, vb) in pairs {
        if va != vb {
            return Err(Error::usage(format!("{a} = {va} but {b} = {vb}")));
        }
    }
    Ok(())
}

/// Timbre and rhythm prompt pairs drawn from a held-out corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptPair {
    pub timbre_index: usize,
    pub rhythm_index: usize,
    pub timbre: AudioClip,
    pub rhythm: AudioClip,
}

/// `n` pairs: generation `i` takes its timbre from clip `i mod N` and its
/// rhythm from clip `(i + N/2) mod N`, so the two prompts never coincide
/// for `N ≥ 2`. Prompts are the leading `timbre_secs` / `rhythm_secs`.
pub fn prompt_pairs(clips: &[AudioClip], n: usize, timbre_secs: f64, rhythm_secs: f64) -> Result<Vec<PromptPair>> {
    if clips.len() < 2 {
        return Err(Error::data("prompt pairs need at least two clips"));
    }
    let cut = |c: &AudioClip, secs: f64| -> Result<AudioClip> {
        let len = ((secs * f64::from(c.sample_rate())).round() as usize).min(c.len());
        Ok(c.excerpt(0, len)?)
    };
    let half = clips.len() / 2;
    (0..n)
        .map(|i| {
            let (t, r) = (i % clips.len(), (i + half) % clips.len());
            Ok(PromptPair { timbre_index: t, rhythm_index: r, timbre: cut(&clips[t], timbre_secs)?, rhythm: cut(&clips[r], rhythm_secs)? })
        })
        .collect()
}

/// Generates one clip per prompt pair; pair `i` uses seed `seed + i`.
pub fn generate_set(
    pairs: &[PromptPair],
    cfg: &PipelineConfig,
    gen: &GenerationConfig,
    model: &MaskedTransformer,
    codec: &NeuralCodec,
) -> Result<Vec<Generation>> {
    preflight(cfg, model, codec)?;
    parallel_map(pairs.len(), |i| {
        let p = &pairs[i];
        let g = GenerationConfig { seed: gen.seed.wrapping_add(i as u64), ..gen.clone() };
        let req = GenerationRequest::new(p.timbre.clone(), p.rhythm.clone(), g, cfg.features);
        generate(&req, model, codec).map_err(Error::from)
    })
    .into_iter()
    .collect()
}
