#![allow(dead_code)]

use gesture_drums::config::PipelineConfig;
use gesture_drums_core::codec::{CodecConfig, CodecTrainOptions, NeuralCodec};
use gesture_drums_core::dsp::AudioClip;
use gesture_drums_core::model::ModelConfig;
use gesture_drums_core::sched::GenerationConfig;
use gesture_drums_core::synth::{synth_corpus, CorpusConfig};
use gesture_drums_core::train::TrainConfig;

/// A configuration small enough to run every stage in seconds.
pub fn tiny_config() -> PipelineConfig {
    let desk = PipelineConfig::desk();
    PipelineConfig {
        corpus: CorpusConfig { clips: 4, duration_secs: 1.0, ..CorpusConfig::default() },
        codec: CodecConfig { codebooks: 2, codebook_size: 16, latent_dim: 8, channels: vec![4, 4, 4, 4], ..CodecConfig::default() },
        codec_train: CodecTrainOptions { steps: 3, batch: 2, excerpt: 4096, seed: 0 },
        model: ModelConfig { n_layers: 1, hidden: 16, n_heads: 2, codebooks: 2, vocab: 16, max_frames: 256, ..ModelConfig::desk() },
        train: TrainConfig { steps: 3, batch: 2, excerpt_seconds: 0.5, ..desk.train.clone() },
        generation: GenerationConfig { iters_per_codebook: vec![2, 2], ..GenerationConfig::default() },
        ..desk
    }
}

pub fn tiny_clips(n: usize, seed: u64) -> Vec<AudioClip> {
    synth_corpus(&CorpusConfig { clips: n, duration_secs: 1.0, seed, ..CorpusConfig::default() })
        .unwrap()
        .into_iter()
        .map(|c| c.audio)
        .collect()
}

pub fn tiny_codec() -> NeuralCodec {
    let cfg = tiny_config();
    gesture_drums::pipeline::train_codec_stage(&tiny_clips(3, 1), &cfg, |_| {}).unwrap()
}
