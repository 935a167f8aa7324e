//! Self-supervised training: one recording supplies both the token buffer
//! and (after augmentation) the rhythm features; one codebook span is
//! masked per example and predicted with cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, TokenGrid};
use crate::dsp::{augment, AudioClip, AugmentFlags};
use crate::model::{Logits, MaskedTransformer, ModelInput};
use crate::nn::{clip_grad_norm, warmup_lr, Adam, AdamConfig};
use crate::rhythm::{RhythmConfig, RhythmExtractor, RhythmFeatureMatrix};
use crate::sched::{sample_training_mask, MaskPlan};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub excerpt_seconds: f64,
    pub learning_rate: f32,
    pub warmup_steps: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    pub grad_clip: f32,
    pub cfg_dropout_p: f64,
    /// Independent probability of each rhythm-branch augmentation.
    pub aug_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 8,
            excerpt_seconds: 2.0,
            learning_rate: 3e-4,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            grad_clip: 1.0,
            cfg_dropout_p: 0.2,
            aug_p: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The published schedule: 6-second excerpts, batch 48, 100 k steps.
    pub fn paper() -> Self {
        TrainConfig { steps: 100_000, batch: 48, excerpt_seconds: 6.0, ..Self::default() }
    }

    /// Excerpt length in token frames at `hop` and `sample_rate`.
    pub fn excerpt_frames(&self, hop: usize, sample_rate: u32) -> usize {
        libm::ceil(self.excerpt_seconds * f64::from(sample_rate) / hop as f64) as usize
    }

    pub fn validate(&self, max_frames: usize, hop: usize, sample_rate: u32) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        for p in [self.cfg_dropout_p, self.aug_p] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        let frames = self.excerpt_frames(hop, sample_rate);
        if frames < 2 || frames > max_frames {
            return Err(Error::InvalidArgument(alloc::format!(
                "excerpt of {frames} frames does not fit the model's {max_frames}"
            )));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rate and clip norm must be positive");
        }
        Ok(())
    }
}

/// A corpus clip with its clean-audio tokens computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingClip {
    pub audio: AudioClip,
    pub tokens: TokenGrid,
}

impl TrainingClip {
    pub fn new<C: Codec + ?Sized>(audio: AudioClip, codec: &C) -> Result<Self> {
        let tokens = codec.encode(&audio)?;
        Ok(TrainingClip { audio, tokens })
    }
}

pub fn prepare_corpus<C: Codec + ?Sized>(clips: &[AudioClip], codec: &C) -> Result<Vec<TrainingClip>> {
    clips.iter().map(|c| TrainingClip::new(c.clone(), codec)).collect()
}

/// One masked training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    /// Excerpt tokens with the plan's cells masked.
    pub grid: TokenGrid,
    pub rhythm: RhythmFeatureMatrix,
    pub plan: MaskPlan,
    /// Ground truth at `plan.masked_frames`, in order.
    pub targets: Vec<u32>,
    pub rhythm_dropped: bool,
    pub augmentations: AugmentFlags,
}

impl TrainExample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            grid: &self.grid,
            rhythm: &self.rhythm,
            target_codebook: self.plan.codebook,
            rhythm_dropped: self.rhythm_dropped,
        }
    }
}

/// Draws a random `frames`-frame excerpt of `clip` and masks it.
///
/// Tokens come from the clean recording; rhythm features from the excerpt
/// audio after each augmentation is enabled with probability `aug_p`.
/// With probability `dropout_p` the example is marked rhythm-dropped.
pub fn make_example<R: Rng + ?Sized>(
    clip: &TrainingClip,
    frames: usize,
    extractor: &RhythmExtractor,
    aug_p: f64,
    dropout_p: f64,
    rng: &mut R,
) -> Result<TrainExample> {
    let total = clip.tokens.frames();
    if total < frames {
        return Err(Error::TooShort { len: total, min: frames });
    }
    let hop = clip.tokens.hop();
    let start = rng.gen_range(0..=total - frames);
    let samples = clip.audio.samples();
    let a = (start * hop).min(samples.len());
    let b = ((start + frames) * hop).min(samples.len());
    let mut excerpt = samples[a..b].to_vec();
    excerpt.resize(frames * hop, 0.0);
    let excerpt = AudioClip::new(excerpt, clip.audio.sample_rate())?;

    let augmentations = AugmentFlags::sample(aug_p, rng);
    let rhythm_audio = if augmentations.any() { augment(&excerpt, augmentations, rng) } else { excerpt };
    let rhythm = extractor.extract(&rhythm_audio)?;
    if rhythm.frames() != frames {
        return Err(Error::Shape(alloc::format!("rhythm has {} frames, tokens {frames}", rhythm.frames())));
    }

    let mut grid = clip.tokens.slice_frames(start..start + frames)?;
    let plan = sample_training_mask(frames, grid.codebooks(), rng)?;
    let mut targets = Vec::with_capacity(plan.masked_frames.len());
    for &t in &plan.masked_frames {
        targets.push(grid.token(plan.codebook, t)?);
        grid.mask(plan.codebook, t);
    }
    let rhythm_dropped = rng.gen_bool(dropout_p);
    Ok(TrainExample { grid, rhythm, plan, targets, rhythm_dropped, augmentations })
}

/// Mean cross-entropy over the masked frames, and its gradient with
/// respect to every logit (zero at unmasked frames).
pub fn masked_cross_entropy(logits: &Logits, masked_frames: &[usize], targets: &[u32]) -> Result<(f64, Vec<f32>)> {
    if masked_frames.is_empty() {
        return Err(Error::EmptyMask);
    }
    if masked_frames.len() != targets.len() {
        return Err(Error::Shape("one target per masked frame".into()));
    }
    let k = logits.vocab;
    let n = masked_frames.len() as f64;
    let mut grad = vec![0.0f32; logits.values.len()];
    let mut total = 0.0;
    for (&t, &y) in masked_frames.iter().zip(targets) {
        if t >= logits.frames || y as usize >= k {
            return Err(Error::Shape(alloc::format!("masked cell ({t}, {y}) outside the logits")));
        }
        let row = logits.row(t);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let z: f64 = row.iter().map(|&v| libm::exp(v as f64 - max)).sum();
        let lse = max + libm::log(z);
        total += lse - row[y as usize] as f64;
        let g = &mut grad[t * k..(t + 1) * k];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (libm::exp(v as f64 - lse) / n) as f32;
        }
        g[y as usize] -= (1.0 / n) as f32;
    }
    Ok((total / n, grad))
}

/// Telemetry for one example of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainStepRecord {
    pub step: usize,
    pub loss: f64,
    pub masked_cells: usize,
    pub codebook: usize,
    pub rhythm_dropped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Mean example loss.
    pub loss: f64,
    pub lr: f32,
    pub grad_norm: f32,
    pub records: Vec<TrainStepRecord>,
}

/// Optimizer state and data pipeline around a [`MaskedTransformer`].
#[derive(Clone, Debug)]
pub struct Trainer {
    model: MaskedTransformer,
    adam: Adam,
    config: TrainConfig,
    extractor: RhythmExtractor,
    rng: ChaCha8Rng,
    frames: usize,
    step: usize,
}

impl Trainer {
    pub fn new(model: MaskedTransformer, config: TrainConfig, rhythm: RhythmConfig, hop: usize, sample_rate: u32) -> Result<Self> {
        config.validate(model.config().max_frames, hop, sample_rate)?;
        if rhythm.n_bands != model.config().bands {
            return Err(Error::InvalidArgument(alloc::format!(
                "model expects {} rhythm bands, features have {}",
                model.config().bands,
                rhythm.n_bands
            )));
        }
        let adam = Adam::new(
            model.param_count(),
            AdamConfig { beta1: config.beta1, beta2: config.beta2, eps: 1e-8, weight_decay: config.weight_decay },
        );
        Ok(Trainer {
            adam,
            extractor: RhythmExtractor::pipeline_default(rhythm)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            frames: config.excerpt_frames(hop, sample_rate),
            step: 0,
            config,
            model,
        })
    }

    pub fn model(&self) -> &MaskedTransformer {
        &self.model
    }

    pub fn into_model(self) -> MaskedTransformer {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn excerpt_frames(&self) -> usize {
        self.frames
    }

    pub fn extractor(&self) -> &RhythmExtractor {
        &self.extractor
    }

    /// Loss and gradient of one example, summed into `grads`.
    fn accumulate(&self, ex: &TrainExample, weight: f32, grads: &mut [f32]) -> Result<f64> {
        let input = ex.input();
        let (logits, cache) = self.model.forward_train(&input)?;
        let (loss, mut dlogits) = masked_cross_entropy(&logits, &ex.plan.masked_frames, &ex.targets)?;
        dlogits.iter_mut().for_each(|g| *g *= weight);
        self.model.backward(&input, &cache, &dlogits, grads)?;
        Ok(loss)
    }

    /// One optimizer step on a fresh batch from `corpus`. On a non-finite
    /// loss the model is left untouched and [`Error::NonFiniteLoss`] returned.
    pub fn step(&mut self, corpus: &[TrainingClip]) -> Result<StepReport> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty training corpus".into()));
        }
        let mut examples = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let clip = &corpus[self.rng.gen_range(0..corpus.len())];
            let ex = make_example(clip, self.frames, &self.extractor, self.config.aug_p, self.config.cfg_dropout_p, &mut self.rng)?;
            examples.push(ex);
        }
        self.step_on(&examples)
    }

    /// One optimizer step on the given examples.
    pub fn step_on(&mut self, examples: &[TrainExample]) -> Result<StepReport> {
        let weight = 1.0 / examples.len() as f32;
        let mut grads = vec![0.0f32; self.model.param_count()];
        let mut records = Vec::with_capacity(examples.len());
        let mut total = 0.0;
        for ex in examples {
            let loss = self.accumulate(ex, weight, &mut grads)?;
            total += loss;
            records.push(TrainStepRecord {
                step: self.step,
                loss,
                masked_cells: ex.plan.masked_frames.len(),
                codebook: ex.plan.codebook,
                rhythm_dropped: ex.rhythm_dropped,
            });
        }
        let loss = total / examples.len() as f64;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        let lr = warmup_lr(self.config.learning_rate, self.step, self.config.warmup_steps);
        self.adam.step(self.model.params_mut(), &grads, lr);
        let report = StepReport { step: self.step, loss, lr, grad_norm, records };
        self.step += 1;
        Ok(report)
    }
}

/// Runs `config.steps` optimizer steps, reporting each to `on_step`.
pub fn train_loop(
    corpus: &[TrainingClip],
    model: MaskedTransformer,
    config: TrainConfig,
    rhythm: RhythmConfig,
    hop: usize,
    sample_rate: u32,
    mut on_step: impl FnMut(&StepReport, &MaskedTransformer),
) -> Result<MaskedTransformer> {
    let steps = config.steps;
    let mut trainer = Trainer::new(model, config, rhythm, hop, sample_rate)?;
    for _ in 0..steps {
        let report = trainer.step(corpus)?;
        on_step(&report, trainer.model());
    }
    Ok(trainer.into_model())
}

/// Fraction of masked cells whose arg-max prediction equals the target,
/// over `n` random examples (conditional, no dropout, no augmentation).
pub fn masked_accuracy<R: Rng + ?Sized>(
    model: &MaskedTransformer,
    clips: &[TrainingClip],
    frames: usize,
    extractor: &RhythmExtractor,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let (mut hits, mut cells) = (0usize, 0usize);
    for i in 0..n {
        let ex = make_example(&clips[i % clips.len()], frames, extractor, 0.0, 0.0, rng)?;
        let logits = model.forward(&ex.input())?;
        for (&t, &y) in ex.plan.masked_frames.iter().zip(&ex.targets) {
            let row = logits.row(t);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += usize::from(best == y as usize);
            cells += 1;
        }
    }
    Ok(hits as f64 / cells.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::SyntheticCodec;
    use crate::model::ModelConfig;
    use crate::SAMPLE_RATE;

    fn tiny_model() -> MaskedTransformer {
        let cfg = ModelConfig {
            n_layers: 1,
            hidden: 16,
            n_heads: 2,
            codebooks: 3,
            vocab: 8,
            bands: 2,
            max_frames: 64,
            ..ModelConfig::desk()
        };
        MaskedTransformer::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn corpus() -> Vec<TrainingClip> {
        let codec = SyntheticCodec::new(3, 8, 512, SAMPLE_RATE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..3)
            .map(|_| {
                let x: Vec<f32> = (0..512 * 12).map(|i| if i % 2048 < 40 { rng.gen_range(-0.9..0.9) } else { 0.0 }).collect();
                TrainingClip::new(AudioClip::new(x, SAMPLE_RATE).unwrap(), &codec).unwrap()
            })
            .collect()
    }

    fn extractor() -> RhythmExtractor {
        RhythmExtractor::pipeline_default(RhythmConfig::default()).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig { batch: 2, excerpt_seconds: 8.0 * 512.0 / 44_100.0, warmup_steps: 2, ..TrainConfig::default() }
    }

    #[test]
    fn uniform_logits_cost_log_k() {
        let logits = Logits { frames: 3, vocab: 256, values: vec![0.5; 768] };
        let (l, _) = masked_cross_entropy(&logits, &[0, 2], &[7, 200]).unwrap();
        assert!((l - libm::log(256.0)).abs() < 1e-12);
        assert_eq!(masked_cross_entropy(&logits, &[], &[]), Err(Error::EmptyMask));
    }

    #[test]
    fn confident_logits_cost_nearly_nothing() {
        let mut values = vec![-40.0f32; 2 * 4];
        values[1] = 40.0;
        values[4 + 3] = 40.0;
        let logits = Logits { frames: 2, vocab: 4, values };
        let (l, _) = masked_cross_entropy(&logits, &[0, 1], &[1, 3]).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn unmasked_logits_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut values: Vec<f32> = (0..6 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = masked_cross_entropy(&Logits { frames: 6, vocab: 5, values: values.clone() }, &[1, 4], &[0, 3]).unwrap();
        for _ in 0..50 {
            for t in [0usize, 2, 3, 5] {
                for v in &mut values[t * 5..(t + 1) * 5] {
                    *v = rng.gen_range(-5.0..5.0);
                }
            }
            let again = masked_cross_entropy(&Logits { frames: 6, vocab: 5, values: values.clone() }, &[1, 4], &[0, 3]).unwrap();
            assert_eq!(again.0, base.0);
            assert!(again.1[..5].iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn example_targets_come_from_clean_tokens() {
        let clips = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let ex = make_example(&clips[0], 8, &extractor(), 0.25, 0.2, &mut rng).unwrap();
            assert_eq!(ex.grid.frames(), 8);
            assert_eq!(ex.rhythm.frames(), 8);
            assert_eq!(ex.grid.masked_count(), ex.targets.len());
            // locate the excerpt inside the clip by its unmasked cells
            let full = &clips[0].tokens;
            let start = (0..=full.frames() - 8)
                .find(|&s| {
                    (0..3).all(|c| {
                        (0..8).all(|t| ex.grid.is_masked(c, t) || ex.grid.token(c, t).unwrap() == full.token(c, s + t).unwrap())
                    }) && ex.plan.masked_frames.iter().zip(&ex.targets).all(|(&t, &y)| full.token(ex.plan.codebook, s + t).unwrap() == y)
                })
                .expect("excerpt matches the clean tokens");
            let _ = start;
        }
    }

    #[test]
    fn without_augmentation_features_match_clean_extraction() {
        let clips = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = make_example(&clips[1], 12, &extractor(), 0.0, 0.0, &mut rng).unwrap();
        assert!(!ex.augmentations.any() && !ex.rhythm_dropped);
        let clean = extractor().extract(&clips[1].audio).unwrap();
        assert_eq!(ex.rhythm, clean);
    }

    #[test]
    fn dropout_frequency_matches_probability() {
        let clips = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let dropped = (0..n)
            .filter(|_| make_example(&clips[0], 2, &extractor(), 0.0, 0.2, &mut rng).unwrap().rhythm_dropped)
            .count();
        let f = dropped as f64 / n as f64;
        assert!((f - 0.2).abs() <= 0.012, "{f}");
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let model = tiny_model();
        let before = model.params().data().to_vec();
        let out = train_loop(&corpus(), model, TrainConfig { steps: 0, ..small_config() }, RhythmConfig::default(), 512, SAMPLE_RATE, |_, _| {})
            .unwrap();
        assert_eq!(out.params().data(), &before[..]);
    }

    #[test]
    fn only_the_sampled_head_receives_gradient() {
        let model = tiny_model();
        let trainer = Trainer::new(model.clone(), small_config(), RhythmConfig::default(), 512, SAMPLE_RATE).unwrap();
        let clips = corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..6 {
            let ex = make_example(&clips[0], 8, trainer.extractor(), 0.25, 0.2, &mut rng).unwrap();
            let mut grads = vec![0.0f32; model.param_count()];
            trainer.accumulate(&ex, 1.0, &mut grads).unwrap();
            for c in 0..3 {
                let nonzero = model.head_ranges(c).iter().any(|r| grads[r.clone()].iter().any(|&g| g != 0.0));
                assert_eq!(nonzero, c == ex.plan.codebook, "head {c}, sampled {}", ex.plan.codebook);
            }
        }
    }

    #[test]
    fn seeded_runs_repeat_and_loss_falls() {
        let clips = corpus();
        let run = |steps| {
            let mut losses = Vec::new();
            train_loop(&clips, tiny_model(), TrainConfig { steps, learning_rate: 3e-3, ..small_config() }, RhythmConfig::default(), 512, SAMPLE_RATE, |r, _| {
                losses.push(r.loss)
            })
            .unwrap();
            losses
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[10], b[10]);
        let long = run(150);
        let head: f64 = long[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = long[130..].iter().sum::<f64>() / 20.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn excerpt_must_fit_the_model() {
        let long = TrainConfig { excerpt_seconds: 10.0, ..small_config() };
        assert!(Trainer::new(tiny_model(), long, RhythmConfig::default(), 512, SAMPLE_RATE).is_err());
        let bands = RhythmConfig::with_bands(3, true);
        assert!(Trainer::new(tiny_model(), small_config(), bands, 512, SAMPLE_RATE).is_err());
    }
}
