//! Synthetic corpus on disk: one WAV plus one JSON sidecar per clip.

use std::path::{Path, PathBuf};

use gesture_drums_core::synth::{synth_corpus, CorpusConfig, DrumClip, KitParams, Voice};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav, WavFormat};

/// Ground truth stored next to each clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file: String,
    pub sample_rate: u32,
    pub duration_secs: f64,
    pub kit: KitParams,
    /// Mean hits per second the pattern was drawn with, per voice.
    pub rates: Rates,
    pub onsets: Onsets,
    pub hit_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub kick: f64,
    pub snare: f64,
    pub hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Onsets {
    pub kick: Vec<f64>,
    pub snare: Vec<f64>,
    pub hat: Vec<f64>,
}

impl Sidecar {
    fn new(file: String, clip: &DrumClip, config: &CorpusConfig) -> Self {
        Sidecar {
            file,
            sample_rate: clip.audio.sample_rate(),
            duration_secs: clip.audio.duration_secs(),
            kit: clip.params,
            rates: Rates { kick: config.kick_rate, snare: config.snare_rate, hat: config.hat_rate },
            onsets: Onsets { kick: clip.onsets(Voice::Kick), snare: clip.onsets(Voice::Snare), hat: clip.onsets(Voice::Hat) },
            hit_count: clip.hits.len(),
        }
    }
}

pub fn clip_name(i: usize) -> String {
    format!("clip_{i:05}")
}

/// Renders `config.clips` clips into `dir`, returning the sidecars.
pub fn write_corpus(dir: impl AsRef<Path>, config: &CorpusConfig) -> Result<Vec<Sidecar>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::data(format!("{}: {e}", dir.display())))?;
    let clips = synth_corpus(config)?;
    let mut sidecars = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let name = clip_name(i);
        write_wav(dir.join(format!("{name}.wav")), &clip.audio, WavFormat::Float32)?;
        let side = Sidecar::new(format!("{name}.wav"), clip, config);
        let json = serde_json::to_string_pretty(&side).expect("sidecar serializes");
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, json + "\n").map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        sidecars.push(side);
    }
    Ok(sidecars)
}

/// WAV files of `dir`, sorted by name.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::data(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<gesture_drums_core::dsp::AudioClip>> {
    list_wavs(dir)?.iter().map(read_wav).collect()
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}
