//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs at full desk scale by default. Set `GDRUMS_ACCEPTANCE_SCALE=quick`
//! to shrink the end-to-end run; the quick run checks that every stage
//! works but does not judge the rhythm and timbre thresholds.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gesture_drums::config::PipelineConfig;
use gesture_drums::pipeline::{encode_corpus, generate_set, prompt_pairs, train_codec_stage, train_model_stage};
use gesture_drums::report::{evaluate, write_manifest, PromptEntry};
use gesture_drums::wav::{read_wav, write_wav, WavFormat};
use gesture_drums_core::codec::{NeuralCodec, SyntheticCodec, TokenGrid};
use gesture_drums_core::dsp::{AudioClip, MelSpectrogram};
use gesture_drums_core::eval::{kad, onset_f1, EmbeddingSet, OnsetList};
use gesture_drums_core::model::{MaskedTransformer, ModelConfig, ModelInput};
use gesture_drums_core::rhythm::{adaptive_split, fixed_split, is_on_grid, RhythmConfig, RhythmExtractor, RhythmFeatureMatrix};
use gesture_drums_core::sched::{confirm_counts, sample_training_mask, span_bounds, GenerationConfig};
use gesture_drums_core::synth::{synth_corpus, CorpusConfig};
use gesture_drums_core::train::{make_example, TrainConfig, TrainingClip};
use gesture_drums_core::{Fnv64, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

/// FNV-1a of every feature value of the golden set, all eight variants.
const GOLDEN_FEATURE_HASH: u64 = 0x7ad2_3e74_b6cf_c148;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn feature_hash(clips: &[AudioClip]) -> Result<u64, String> {
    let mut h = Fnv64::default();
    for bands in 1..=4 {
        for adaptive in [false, true] {
            let ex = RhythmExtractor::pipeline_default(RhythmConfig::with_bands(bands, adaptive)).map_err(|e| e.to_string())?;
            for clip in clips {
                let f = ex.extract(clip).map_err(|e| e.to_string())?;
                for v in f.values() {
                    h.write(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(h.finish())
}

fn features_correct() -> Outcome {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    paths.sort();
    ensure!(paths.len() == 3, "expected 3 golden WAVs, found {}", paths.len());
    let clips: Vec<AudioClip> = paths.iter().map(|p| read_wav(p).map_err(|e| e.message)).collect::<Result<_, _>>()?;

    let start = Instant::now();
    let first = feature_hash(&clips)?;
    let second = feature_hash(&clips)?;
    ensure!(first == second, "feature hash changed between runs: {first:016x} vs {second:016x}");
    ensure!(first == GOLDEN_FEATURE_HASH, "feature hash {first:016x} differs from pinned {GOLDEN_FEATURE_HASH:016x}");

    let mut checked = 0;
    for bands in 1..=4 {
        for adaptive in [false, true] {
            let ex = RhythmExtractor::pipeline_default(RhythmConfig::with_bands(bands, adaptive)).map_err(|e| e.to_string())?;
            for clip in &clips {
                let base = ex.extract(clip).map_err(|e| e.to_string())?;
                ensure!(base.values().iter().all(|&v| is_on_grid(v)), "value off the 33-step grid (B={bands})");
                for gain in [0.25f32, 4.0] {
                    let scaled = ex.extract(&clip.scaled(gain)).map_err(|e| e.to_string())?;
                    ensure!(scaled == base, "gain {gain} changed features (B={bands}, adaptive={adaptive})");
                    checked += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.2} s, limit 1 s");
    Ok(format!("hash {first:016x} stable, {checked} gain checks bitwise, {secs:.2} s"))
}

/// Smallest bin whose inclusive prefix sum reaches half the total, each
/// prefix summed from scratch; the last bin is kept for the upper band.
fn brute_force_split(totals: &[f64]) -> usize {
    let n = totals.len();
    let total: f64 = totals.iter().sum();
    if total <= 0.0 {
        return n / 2 - 1;
    }
    let k = (0..n).find(|&k| 2.0 * totals[..=k].iter().sum::<f64>() >= total).unwrap_or(n - 1);
    k.min(n - 2)
}

fn adaptive_split_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut upper_edge = 0;
    for i in 0..1000 {
        let frames = rng.gen_range(1..=40);
        let style = i % 4;
        let values: Vec<f64> = (0..80 * frames)
            .map(|j| match style {
                0 => rng.gen_range(0.0..1.0),
                1 => if rng.gen_bool(0.1) { rng.gen_range(0.0..100.0) } else { 0.0 },
                2 => (rng.gen_range(0.0f64..1.0)).powi(8) * (1.0 + (j / frames) as f64),
                _ => if j / frames >= 70 { rng.gen_range(0.0..50.0) } else { rng.gen_range(0.0..0.01) },
            })
            .collect();
        let mel = MelSpectrogram::from_values(80, frames, 512, values.clone()).map_err(|e| e.to_string())?;
        let totals: Vec<f64> = (0..80).map(|m| values[m * frames..(m + 1) * frames].iter().sum()).collect();
        let want = brute_force_split(&totals);
        let got = adaptive_split(&mel, 2).map_err(|e| e.to_string())?.split_bins()[0];
        ensure!(got == want, "matrix {i}: split {got}, oracle {want}");
        if want >= 60 {
            upper_edge += 1;
        }
    }
    ensure!(fixed_split(80, 2).map_err(|e| e.to_string())?.split_bins() == [39], "fixed split moved");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s, limit 10 s");
    Ok(format!("1000/1000 agree ({upper_edge} with high splits), {secs:.2} s"))
}

fn scheduler_conforms() -> Outcome {
    let start = Instant::now();
    let mut cases = 0u64;
    for iters in 1..=64usize {
        for n in 0..=10_000usize {
            let got = confirm_counts(n, iters);
            ensure!(got.len() == iters, "n={n} iters={iters}: {} counts", got.len());
            let mut prev = n as i64;
            for (i, &c) in got.iter().enumerate() {
                let remaining = if i + 1 == iters {
                    0
                } else {
                    ((std::f64::consts::FRAC_PI_2 * (i + 1) as f64 / iters as f64).cos() * n as f64).round() as i64
                };
                ensure!(c as i64 == prev - remaining, "n={n} iters={iters} i={i}: confirms {c}, formula {}", prev - remaining);
                prev = remaining;
            }
            ensure!(got.iter().sum::<usize>() == n, "n={n} iters={iters}: sum differs");
            cases += 1;
        }
    }
    let total: usize = GenerationConfig::default().iters_per_codebook.iter().sum();
    ensure!(total == 56, "default schedule totals {total}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.2} s, limit 30 s");
    Ok(format!("{cases} (n, iters) cases, default schedule 56 iterations, {secs:.2} s"))
}

fn mask_statistics() -> Outcome {
    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..DRAWS {
        let frames = rng.gen_range(2..=512);
        let plan = sample_training_mask(frames, 9, &mut rng).map_err(|e| e.to_string())?;
        let frac = plan.span_len() as f64 / frames as f64;
        ensure!((0.5..=0.75).contains(&frac), "span fraction {frac} for {frames} frames");
        let (lo, hi) = span_bounds(frames);
        ensure!((lo..=hi).contains(&plan.span_len()) && plan.span.end <= frames, "span {:?} for {frames} frames", plan.span);
    }

    let frames = TrainConfig::default().excerpt_frames(512, SAMPLE_RATE);
    let mut sum = 0.0;
    for _ in 0..DRAWS {
        let plan = sample_training_mask(frames, 9, &mut rng).map_err(|e| e.to_string())?;
        sum += plan.masked_frames.len() as f64 / plan.span_len() as f64;
    }
    let mean = sum / DRAWS as f64;
    let target = 2.0 / std::f64::consts::PI;
    ensure!((mean - target).abs() <= 0.01, "within-span fraction {mean:.4}, expected {target:.4} ± 0.01");

    let codec = SyntheticCodec::new(9, 16, 512, SAMPLE_RATE).map_err(|e| e.to_string())?;
    let audio = synth_corpus(&CorpusConfig { clips: 1, duration_secs: 0.2, seed: 4, ..CorpusConfig::default() })
        .map_err(|e| e.to_string())?
        .remove(0)
        .audio;
    let clip = TrainingClip::new(audio, &codec).map_err(|e| e.to_string())?;
    let ex = RhythmExtractor::pipeline_default(RhythmConfig::default()).map_err(|e| e.to_string())?;
    let p = TrainConfig::default().cfg_dropout_p;
    let mut dropped = 0usize;
    for _ in 0..DRAWS {
        dropped += make_example(&clip, 2, &ex, 0.0, p, &mut rng).map_err(|e| e.to_string())?.rhythm_dropped as usize;
    }
    let freq = dropped as f64 / DRAWS as f64;
    let sigma = (p * (1.0 - p) / DRAWS as f64).sqrt();
    ensure!((freq - p).abs() <= 3.0 * sigma, "dropout frequency {freq:.4}, expected {p} ± {:.4}", 3.0 * sigma);
    Ok(format!("span fraction in [0.50, 0.75], within-span {mean:.4} (2/π = {target:.4}), dropout {freq:.4} (± {:.4})", 3.0 * sigma))
}

fn random_rhythm(rng: &mut ChaCha8Rng, bands: usize, frames: usize) -> RhythmFeatureMatrix {
    let vals = (0..bands * frames).map(|_| rng.gen_range(0..=32) as f64 / 32.0).collect();
    RhythmFeatureMatrix::new(bands, frames, vals, true).unwrap()
}

fn all_logits(m: &MaskedTransformer, grid: &TokenGrid, rhythm: &RhythmFeatureMatrix, dropped: bool) -> Vec<Vec<f32>> {
    (0..grid.codebooks())
        .map(|c| m.forward(&ModelInput { grid, rhythm, target_codebook: c, rhythm_dropped: dropped }).unwrap().values)
        .collect()
}

fn gradient_check() -> Result<(usize, f64), String> {
    let cfg = ModelConfig { n_layers: 2, hidden: 16, n_heads: 2, codebooks: 3, vocab: 8, bands: 2, max_frames: 32, init_std: 0.3, ..ModelConfig::desk() };
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let m = MaskedTransformer::<f32>::init(cfg.clone(), &mut rng).map_err(|e| e.to_string())?.cast::<f64>();
    let frames = 8;
    let tokens = (0..cfg.codebooks * frames).map(|_| rng.gen_range(0..cfg.vocab as u32)).collect();
    let mask = (0..cfg.codebooks * frames).map(|_| rng.gen_bool(0.4)).collect();
    let grid = TokenGrid::from_parts(cfg.codebooks, frames, cfg.vocab, 512, tokens, mask).map_err(|e| e.to_string())?;
    let rhythm = random_rhythm(&mut rng, cfg.bands, frames);
    let input = ModelInput { grid: &grid, rhythm: &rhythm, target_codebook: 1, rhythm_dropped: false };
    let weights: Vec<f64> = (0..frames * cfg.vocab).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |m: &MaskedTransformer<f64>| -> f64 {
        m.forward(&input).unwrap().values.iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    let (_, cache) = m.forward_train(&input).map_err(|e| e.to_string())?;
    let mut grads = vec![0.0f64; m.param_count()];
    m.backward(&input, &cache, &weights, &mut grads).map_err(|e| e.to_string())?;
    let eps = 1e-5;
    let (mut checked, mut worst) = (0, 0.0f64);
    for (i, &an) in grads.iter().enumerate().take(m.param_count()) {
        let mut plus = m.clone();
        plus.params_mut().data_mut()[i] += eps;
        let mut minus = m.clone();
        minus.params_mut().data_mut()[i] -= eps;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
        let scale = fd.abs().max(an.abs());
        if scale < 1e-7 {
            continue;
        }
        let rel = (fd - an).abs() / scale;
        ensure!(rel <= 1e-3, "parameter {i}: analytic {an:e}, finite difference {fd:e}");
        worst = worst.max(rel);
        checked += 1;
    }
    ensure!(checked * 2 > m.param_count(), "only {checked} of {} parameters had usable gradients", m.param_count());
    Ok((checked, worst))
}

fn model_invariants() -> Outcome {
    let cfg = ModelConfig { n_layers: 2, hidden: 32, n_heads: 4, codebooks: 4, vocab: 32, bands: 2, max_frames: 64, ..ModelConfig::desk() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = MaskedTransformer::<f32>::init(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;
    let (c_n, k) = (cfg.codebooks, cfg.vocab as u32);
    let (mut sensitive, mut perturbed) = (0, 0);
    for case in 0..100 {
        let frames = rng.gen_range(2..=48);
        let tokens: Vec<u32> = (0..c_n * frames).map(|_| rng.gen_range(0..k)).collect();
        let mask: Vec<bool> = (0..c_n * frames).map(|_| rng.gen_bool(0.3)).collect();
        let grid = TokenGrid::from_parts(c_n, frames, cfg.vocab, 512, tokens.clone(), mask.clone()).unwrap();
        let rhythm = random_rhythm(&mut rng, cfg.bands, frames);
        let dropped = case % 5 == 0;
        let base = all_logits(&m, &grid, &rhythm, dropped);

        let mut hidden_tokens = tokens.clone();
        for t in 0..frames {
            if let Some(low) = grid.lowest_masked(t) {
                for c in low..c_n {
                    hidden_tokens[c * frames + t] = rng.gen_range(0..k);
                    perturbed += 1;
                }
            }
        }
        let g2 = TokenGrid::from_parts(c_n, frames, cfg.vocab, 512, hidden_tokens, mask.clone()).unwrap();
        ensure!(all_logits(&m, &g2, &rhythm, dropped) == base, "case {case}: tokens at or above the lowest masked codebook were read");

        let mut vals = rhythm.values().to_vec();
        for t in 0..frames {
            if dropped || grid.lowest_masked(t).is_none() {
                for b in 0..cfg.bands {
                    vals[b * frames + t] = rng.gen_range(0..=32) as f64 / 32.0;
                }
            }
        }
        let r2 = RhythmFeatureMatrix::new(cfg.bands, frames, vals, true).unwrap();
        ensure!(all_logits(&m, &grid, &r2, dropped) == base, "case {case}: rhythm at ungated frames was read");

        // the same perturbation at a masked frame must be visible
        if !dropped {
            if let Some(t) = (0..frames).find(|&t| grid.lowest_masked(t).is_some()) {
                let mut vals = rhythm.values().to_vec();
                vals[t] = if vals[t] == 0.0 { 1.0 } else { 0.0 };
                let r3 = RhythmFeatureMatrix::new(cfg.bands, frames, vals, true).unwrap();
                sensitive += usize::from(all_logits(&m, &grid, &r3, false) != base);
            }
        }
    }
    ensure!(sensitive >= 70, "rhythm at masked frames changed the output in only {sensitive} cases");
    let (checked, worst) = gradient_check()?;
    Ok(format!("100 inputs bitwise invariant ({perturbed} hidden tokens perturbed), gradients: {checked} parameters, worst relative error {worst:.1e}"))
}

struct Scale {
    full: bool,
    train_clips: usize,
    codec_steps: usize,
    model_steps: usize,
    generations: usize,
    rerun: usize,
    variant_steps: usize,
}

impl Scale {
    fn from_env() -> Self {
        let quick = std::env::var("GDRUMS_ACCEPTANCE_SCALE").is_ok_and(|v| v == "quick");
        if quick {
            Scale { full: false, train_clips: 16, codec_steps: 30, model_steps: 20, generations: 6, rerun: 2, variant_steps: 3 }
        } else {
            Scale { full: true, train_clips: 200, codec_steps: 2000, model_steps: 2000, generations: 50, rerun: 10, variant_steps: 50 }
        }
    }
}

struct DeskRun {
    cfg: PipelineConfig,
    codec: NeuralCodec,
    corpus: Vec<TrainingClip>,
    held_out: Vec<AudioClip>,
}

fn write_set(dir: &Path, gens: &[AudioClip]) -> Result<Vec<String>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    gens.iter()
        .enumerate()
        .map(|(i, g)| {
            let path = dir.join(format!("gen_{i:03}.wav"));
            write_wav(&path, g, WavFormat::Float32).map_err(|e| e.message)?;
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
        })
        .collect()
}

fn desk_run(scale: &Scale, work: &Path, run: &mut Option<DeskRun>) -> Outcome {
    let t0 = Instant::now();
    let mut cfg = PipelineConfig::desk();
    cfg.corpus.clips = scale.train_clips;
    cfg.codec_train.steps = scale.codec_steps;
    cfg.train.steps = scale.model_steps;
    let clips: Vec<AudioClip> = synth_corpus(&cfg.corpus).map_err(|e| e.to_string())?.into_iter().map(|c| c.audio).collect();
    let codec = train_codec_stage(&clips, &cfg, |s| {
        if (s.step + 1) % 500 == 0 {
            eprintln!("  codec step {} ({:.0} s)", s.step + 1, t0.elapsed().as_secs_f64());
        }
    })
    .map_err(|e| e.message)?;
    let corpus = encode_corpus(&clips, &codec, None).map_err(|e| e.message)?;
    let t1 = Instant::now();
    let mut window = 0.0;
    let model = train_model_stage(&corpus, &cfg, |r, _| {
        window += r.loss;
        if (r.step + 1) % 250 == 0 {
            eprintln!("  model step {} loss {:.3} ({:.0} s)", r.step + 1, window / 250.0, t1.elapsed().as_secs_f64());
            window = 0.0;
        }
    })
    .map_err(|e| e.message)?;

    let held_out: Vec<AudioClip> = synth_corpus(&CorpusConfig { clips: 50, seed: 1_000, ..cfg.corpus.clone() })
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|c| c.audio)
        .collect();
    let pairs = prompt_pairs(&held_out, scale.generations, 1.0, 2.0).map_err(|e| e.message)?;
    let gen_cfg = cfg.generation.clone();
    let t2 = Instant::now();
    let gens: Vec<AudioClip> = generate_set(&pairs, &cfg, &gen_cfg, &model, &codec).map_err(|e| e.message)?.into_iter().map(|g| g.audio).collect();
    let gen_secs = t2.elapsed().as_secs_f64();

    let dir = work.join("desk");
    let hashes = write_set(&dir.join("first"), &gens)?;
    let rerun: Vec<AudioClip> = generate_set(&pairs[..scale.rerun], &cfg, &gen_cfg, &model, &codec)
        .map_err(|e| e.message)?
        .into_iter()
        .map(|g| g.audio)
        .collect();
    let rehashes = write_set(&dir.join("rerun"), &rerun)?;
    let deterministic = rehashes[..] == hashes[..scale.rerun];

    let mut entries = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let (r, t) = (dir.join(format!("rhythm_{i:03}.wav")), dir.join(format!("timbre_{i:03}.wav")));
        write_wav(&r, &p.rhythm, WavFormat::Float32).map_err(|e| e.message)?;
        write_wav(&t, &p.timbre, WavFormat::Float32).map_err(|e| e.message)?;
        entries.push(PromptEntry { generation: format!("first/gen_{i:03}.wav").into(), rhythm: r, timbre: t });
    }
    write_manifest(&dir, &entries).map_err(|e| e.message)?;
    let references: Vec<(String, AudioClip)> = clips.iter().enumerate().map(|(i, c)| (format!("train_{i:03}"), c.clone())).collect();
    let report = evaluate(&dir, &entries, &references, 2000, 6).map_err(|e| e.message)?;
    report.write(&dir).map_err(|e| e.message)?;
    let metric = |name: &str| report.metric(name).copied().ok_or(format!("report lacks {name}"));
    let f1 = metric("f1_low_100")?;
    let shuffled = metric("f1_low_100_shuffled")?;
    let timbre = metric("mfcc_timbre_minus_random")?;

    *run = Some(DeskRun { cfg, codec, corpus, held_out });

    let detail = format!(
        "(a) {} of {} reruns identical; (b) F1_low_100 {:.3} vs shuffled {:.3} (ratio {:.2}, need 2.00); (c) timbre minus random {:.4} [{:.4}, {:.4}]; {:.1} s per generation, {:.0} s total",
        rehashes.iter().zip(&hashes).filter(|(a, b)| a == b).count(),
        scale.rerun,
        f1.mean,
        shuffled.mean,
        f1.mean / shuffled.mean.max(1e-12),
        timbre.mean,
        timbre.low,
        timbre.high,
        gen_secs / scale.generations as f64,
        t0.elapsed().as_secs_f64()
    );
    ensure!(deterministic, "{detail}");
    if !scale.full {
        return Ok(format!("quick scale, thresholds not judged: {detail}"));
    }
    ensure!(f1.mean >= 2.0 * shuffled.mean, "{detail}");
    ensure!(timbre.mean > 0.0 && timbre.excludes_zero(), "{detail}");
    Ok(detail)
}

/// Size of the largest one-to-one matching, by trying every assignment.
fn max_matching(reference: &[f64], estimate: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
    let Some((&r, rest)) = reference.split_first() else { return 0 };
    let mut best = max_matching(rest, estimate, used, tol);
    for j in 0..estimate.len() {
        if !used[j] && (r - estimate[j]).abs() <= tol {
            used[j] = true;
            best = best.max(1 + max_matching(rest, estimate, used, tol));
            used[j] = false;
        }
    }
    best
}

fn oracle_f1(reference: &[f64], estimate: &[f64], tol: f64) -> (f64, f64, f64) {
    match (reference.len(), estimate.len()) {
        (0, 0) => (1.0, 1.0, 1.0),
        (0, _) | (_, 0) => (0.0, 0.0, 0.0),
        (nr, ne) => {
            let m = max_matching(reference, estimate, &mut vec![false; ne], tol) as f64;
            let (p, r) = (m / ne as f64, m / nr as f64);
            (p, r, if m == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        }
    }
}

fn subsets(grid: &[f64]) -> Vec<Vec<f64>> {
    (0u32..1 << grid.len()).map(|bits| grid.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &t)| t).collect()).collect()
}

fn metric_oracles() -> Outcome {
    let ref_grid = [0.0, 0.08, 0.15, 0.21, 0.30, 0.42];
    let est_grid = [0.02, 0.09, 0.13, 0.25, 0.33, 0.50];
    let (refs, ests) = (subsets(&ref_grid), subsets(&est_grid));
    let mut cases = 0;
    for tol in [0.03, 0.05, 0.1] {
        for r in &refs {
            for e in &ests {
                let got = onset_f1(&OnsetList::new(r.clone()).unwrap(), &OnsetList::new(e.clone()).unwrap(), tol).map_err(|e| e.to_string())?;
                let (p, rc, f) = oracle_f1(r, e, tol);
                ensure!(
                    (got.precision - p).abs() <= 1e-12 && (got.recall - rc).abs() <= 1e-12 && (got.f1 - f).abs() <= 1e-12,
                    "ref {r:?} est {e:?} tol {tol}: got {got:?}, oracle ({p}, {rc}, {f})"
                );
                cases += 1;
            }
        }
    }

    let worked = onset_f1(&OnsetList::new(vec![0.0, 0.5, 1.0]).unwrap(), &OnsetList::new(vec![0.02, 0.52, 1.2]).unwrap(), 0.03)
        .map_err(|e| e.to_string())?;
    ensure!(worked.precision == 2.0 / 3.0 && worked.recall == 2.0 / 3.0 && worked.f1 == 2.0 / 3.0, "worked example gave {worked:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vectors: Vec<f64> = (0..20 * 26).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let a = EmbeddingSet::new("a", 26, vectors).map_err(|e| e.to_string())?;
    let self_distance = kad(&a, &a).map_err(|e| e.to_string())?;
    ensure!(self_distance <= 1e-9, "kad(A, A) = {self_distance:e}");
    // with the diagonal excluded from the within-set means only:
    // 100 · 2 (S − m·D) / (m² (m − 1)), S the full kernel sum and D its trace
    let m = a.len();
    let (mut full, mut trace) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let k = (a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum::<f64>() / 26.0 + 1.0).powi(3);
            full += k;
            if i == j {
                trace += k;
            }
        }
    }
    let closed = 200.0 * (full - m as f64 * trace) / (m * m * (m - 1)) as f64;
    ensure!((self_distance - closed).abs() <= 1e-9 * closed.abs().max(1.0), "kad(A, A) = {self_distance}, closed form {closed}");
    Ok(format!("{cases} list pairs match the exhaustive oracle, worked example 2/3, kad(A, A) = {self_distance:.3} matches the closed form"))
}

fn parameter_count() -> Outcome {
    let m = MaskedTransformer::<f32>::zeroed(ModelConfig::paper()).map_err(|e| e.to_string())?;
    let n = m.param_count();
    let rel = (n as f64 - 43e6).abs() / 43e6;
    ensure!(rel <= 0.10, "{n} parameters, {:.1}% from 43 M", 100.0 * rel);
    Ok(format!("{n} parameters, {:.1}% from 43 M", 100.0 * rel))
}

fn ablation_variants(scale: &Scale, run: Option<&DeskRun>) -> Outcome {
    let run = run.ok_or("end-to-end run did not produce a codec")?;
    let pairs = prompt_pairs(&run.held_out, 2, 1.0, 2.0).map_err(|e| e.message)?;
    let mut done = Vec::new();
    for (bands, adaptive) in [(1, true), (2, false), (2, true), (3, true), (4, true)] {
        let mut cfg = run.cfg.clone();
        cfg.features = RhythmConfig::with_bands(bands, adaptive);
        cfg.model.bands = bands;
        cfg.train.steps = scale.variant_steps;
        let model = train_model_stage(&run.corpus, &cfg, |_, _| {}).map_err(|e| format!("B={bands} adaptive={adaptive}: {}", e.message))?;
        let gens = generate_set(&pairs, &cfg, &cfg.generation, &model, &run.codec).map_err(|e| format!("B={bands} adaptive={adaptive}: {}", e.message))?;
        ensure!(gens.iter().all(|g| g.audio.samples().iter().all(|v| v.is_finite())), "B={bands}: non-finite audio");
        done.push(format!("{bands}{}", if adaptive { "a" } else { "f" }));
    }
    Ok(format!("variants {} trained {} steps and generated", done.join(", "), scale.variant_steps))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("[{tag}] {n} {name}: {detail} ({secs:.1} s)");
    outcome.is_ok()
}

fn main() {
    let scale = Scale::from_env();
    let work = tempfile::tempdir().expect("temporary directory");
    let mut run = None;
    let results = [
        report(1, "feature correctness", features_correct),
        report(2, "adaptive split oracle", adaptive_split_oracle),
        report(3, "scheduler conformance", scheduler_conforms),
        report(4, "mask statistics", mask_statistics),
        report(5, "model invariants", model_invariants),
        report(6, "end-to-end desk run", || desk_run(&scale, work.path(), &mut run)),
        report(7, "metric oracles", metric_oracles),
        report(8, "parameter accounting", parameter_count),
        report(9, "ablation variants", || ablation_variants(&scale, run.as_ref())),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
