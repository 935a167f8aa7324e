//! Experiment configuration: one TOML file covering every stage.

use std::path::Path;

use gesture_drums_core::codec::{CodecConfig, CodecTrainOptions};
use gesture_drums_core::model::ModelConfig;
use gesture_drums_core::rhythm::RhythmConfig;
use gesture_drums_core::sched::GenerationConfig;
use gesture_drums_core::synth::CorpusConfig;
use gesture_drums_core::train::TrainConfig;
use gesture_drums_core::SAMPLE_RATE;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Hop of the mel analysis behind the rhythm features.
pub const FEATURE_HOP: usize = 512;

pub const DESK_TOML: &str = include_str!("../configs/desk.toml");
pub const PAPER_TOML: &str = include_str!("../configs/paper.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub features: RhythmConfig,
    pub corpus: CorpusConfig,
    pub codec: CodecConfig,
    pub codec_train: CodecTrainOptions,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
}

impl PipelineConfig {
    /// CPU-scale settings used by the end-to-end tests.
    pub fn desk() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            features: RhythmConfig::default(),
            corpus: CorpusConfig::default(),
            codec: CodecConfig::default(),
            codec_train: CodecTrainOptions::default(),
            model: ModelConfig::desk(),
            train: TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() },
            generation: GenerationConfig::default(),
        }
    }

    /// The published model size and training schedule.
    pub fn paper() -> Self {
        PipelineConfig {
            codec: CodecConfig { codebook_size: 1024, ..CodecConfig::default() },
            model: ModelConfig::paper(),
            train: TrainConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable in TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::usage(format!("{}: {}", path.display(), e.message)))
    }

    /// `desk`, `paper`, or a path to a TOML file.
    pub fn resolve(name: &str) -> Result<Self> {
        match name {
            "desk" => Self::from_toml(DESK_TOML),
            "paper" => Self::from_toml(PAPER_TOML),
            path => Self::load(path),
        }
    }

    /// Cross-stage consistency, reported field by field.
    pub fn validate(&self) -> Result<()> {
        let mismatch = |a: &str, va: usize, b: &str, vb: usize| Err(Error::usage(format!("config: {a} = {va} but {b} = {vb}")));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::usage(format!("config: schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.codec.codebooks != self.model.codebooks {
            return mismatch("model.codebooks", self.model.codebooks, "codec.codebooks", self.codec.codebooks);
        }
        if self.codec.codebook_size != self.model.vocab {
            return mismatch("model.vocab", self.model.vocab, "codec.codebook_size", self.codec.codebook_size);
        }
        if self.features.n_bands != self.model.bands {
            return mismatch("model.bands", self.model.bands, "features.n_bands", self.features.n_bands);
        }
        if self.codec.hop != FEATURE_HOP {
            return mismatch("codec.hop", self.codec.hop, "feature hop", FEATURE_HOP);
        }
        if self.generation.iters_per_codebook.len() != self.codec.codebooks {
            return mismatch(
                "generation.iters_per_codebook length",
                self.generation.iters_per_codebook.len(),
                "codec.codebooks",
                self.codec.codebooks,
            );
        }
        for (field, rate) in [("codec.sample_rate", self.codec.sample_rate), ("corpus.sample_rate", self.corpus.sample_rate)] {
            if rate != SAMPLE_RATE {
                return Err(Error::usage(format!("config: {field} = {rate} but the pipeline runs at {SAMPLE_RATE}")));
            }
        }
        if !(1..=4).contains(&self.features.n_bands) {
            return Err(Error::usage(format!("config: features.n_bands = {} outside 1..=4", self.features.n_bands)));
        }
        let prefix = |e: gesture_drums_core::Error, what: &str| Error::usage(format!("config: {what}: {e}"));
        self.codec.validate().map_err(|e| prefix(e, "codec"))?;
        self.model.validate().map_err(|e| prefix(e, "model"))?;
        self.generation.validate(self.codec.codebooks).map_err(|e| prefix(e, "generation"))?;
        self.train
            .validate(self.model.max_frames, self.codec.hop, SAMPLE_RATE)
            .map_err(|e| prefix(e, "train"))?;
        Ok(())
    }
}
