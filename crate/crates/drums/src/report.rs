//! Metric reports over a directory of generations.

use std::path::{Path, PathBuf};

use gesture_drums_core::dsp::AudioClip;
use gesture_drums_core::eval::{
    bootstrap_mean, detect_onsets, kad, onset_f1, score_clip, ClipScores, EmbeddingSet, Interval, MfccStats, OnsetBand,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::read_wav;

type Column = (&'static str, fn(&ClipRecord) -> f64);

pub const MANIFEST: &str = "prompts.json";

/// Which prompts produced a generation. Paths are relative to the
/// manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub generation: PathBuf,
    pub rhythm: PathBuf,
    pub timbre: PathBuf,
}

pub fn write_manifest(dir: impl AsRef<Path>, entries: &[PromptEntry]) -> Result<()> {
    let path = dir.as_ref().join(MANIFEST);
    let json = serde_json::to_string_pretty(entries).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PromptEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Fixed description of the MFCC front end, written into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricHeader {
    pub mfcc: String,
    pub onset_detector: String,
    pub kad: String,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl MetricHeader {
    pub fn new(resamples: usize, seed: u64) -> Self {
        MetricHeader {
            mfcc: "44.1 kHz, n_fft 2048 Hann, hop 512, 80 HTK mel bands, log(power + 1e-10), orthonormal DCT-II, 80 coefficients incl. c0, no lifter, time-averaged".into(),
            onset_detector: "spectral flux, n_fft 2048, hop 256; low < 150 Hz, high 150 Hz to 8 kHz".into(),
            kad: "unbiased MMD^2 x100, kernel (x.y/D + 1)^3, MFCC mean+std embedding (D = 160)".into(),
            bootstrap_resamples: resamples,
            confidence: 0.95,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub generation: String,
    pub random_anchor: String,
    #[serde(flatten)]
    pub scores: ClipScores,
    /// Low-band F1 (100 ms) against the next entry's rhythm prompt.
    pub f1_low_100_shuffled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    #[serde(flatten)]
    pub interval: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: MetricHeader,
    pub records: Vec<ClipRecord>,
    pub summary: Vec<SummaryRow>,
    pub kad: Option<f64>,
    /// Files that could not be read; their entries were skipped.
    pub missing: Vec<String>,
}

impl Report {
    pub fn metric(&self, name: &str) -> Option<&Interval> {
        self.summary.iter().find(|r| r.metric == name).map(|r| &r.interval)
    }

    /// Header line, one line per clip, then one line per summary metric.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let line = |v: serde_json::Value| serde_json::to_string(&v).expect("json") + "\n";
        out += &line(serde_json::json!({ "kind": "header", "header": self.header, "missing": self.missing }));
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("record");
            v["kind"] = "clip".into();
            out += &line(v);
        }
        for s in &self.summary {
            let mut v = serde_json::to_value(s).expect("summary");
            v["kind"] = "summary".into();
            out += &line(v);
        }
        if let Some(k) = self.kad {
            out += &line(serde_json::json!({ "kind": "summary", "metric": "kad", "mean": k }));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "generation",
            "random_anchor",
            "f1_low_30",
            "f1_low_100",
            "f1_high_30",
            "f1_high_100",
            "mfcc_rhythm",
            "mfcc_timbre",
            "mfcc_random",
            "f1_low_100_shuffled",
        ])
        .expect("in-memory write");
        for r in &self.records {
            let s = &r.scores;
            let nums = [s.f1_low_30, s.f1_low_100, s.f1_high_30, s.f1_high_100, s.mfcc_rhythm, s.mfcc_timbre, s.mfcc_random, r.f1_low_100_shuffled];
            let mut row = vec![r.generation.clone(), r.random_anchor.clone()];
            row.extend(nums.iter().map(|v| v.to_string()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, text) in [("report.jsonl", self.to_jsonl()), ("report.csv", self.to_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

struct Loaded {
    name: String,
    generation: AudioClip,
    rhythm: AudioClip,
    timbre: AudioClip,
}

/// Scores one generation per manifest entry.
///
/// The random anchor for each generation is a seeded draw from
/// `references`; the shuffled rhythm baseline pairs each generation with the
/// next entry's rhythm prompt. Unreadable files are listed in
/// [`Report::missing`] and their entries skipped.
pub fn evaluate(base: &Path, entries: &[PromptEntry], references: &[(String, AudioClip)], resamples: usize, seed: u64) -> Result<Report> {
    if references.is_empty() {
        return Err(Error::data("no reference clips to draw random anchors from"));
    }
    let mut missing = Vec::new();
    let mut loaded = Vec::new();
    for e in entries {
        let mut read = |p: &Path| {
            let path = resolve(base, p);
            match read_wav(&path) {
                Ok(c) => Some(c),
                Err(_) => {
                    missing.push(path.display().to_string());
                    None
                }
            }
        };
        let (g, r, t) = (read(&e.generation), read(&e.rhythm), read(&e.timbre));
        if let (Some(generation), Some(rhythm), Some(timbre)) = (g, r, t) {
            loaded.push(Loaded { name: e.generation.display().to_string(), generation, rhythm, timbre });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<usize> = loaded.iter().map(|_| rng.gen_range(0..references.len())).collect();
    let n = loaded.len();
    let records = parallel_map(n, |i| -> Result<ClipRecord> {
        let l = &loaded[i];
        let (anchor_name, anchor) = &references[anchors[i]];
        let scores = score_clip(&l.generation, &l.rhythm, &l.timbre, anchor)?;
        let other = &loaded[(i + 1) % n].rhythm;
        let shuffled = onset_f1(&detect_onsets(other, OnsetBand::Low), &detect_onsets(&l.generation, OnsetBand::Low), 0.1)?.f1;
        Ok(ClipRecord { generation: l.name.clone(), random_anchor: anchor_name.clone(), scores, f1_low_100_shuffled: shuffled })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut summary = Vec::new();
    if !records.is_empty() {
        let columns: [Column; 10] = [
            ("f1_low_30", |r| r.scores.f1_low_30),
            ("f1_low_100", |r| r.scores.f1_low_100),
            ("f1_high_30", |r| r.scores.f1_high_30),
            ("f1_high_100", |r| r.scores.f1_high_100),
            ("f1_low_100_shuffled", |r| r.f1_low_100_shuffled),
            ("mfcc_rhythm", |r| r.scores.mfcc_rhythm),
            ("mfcc_timbre", |r| r.scores.mfcc_timbre),
            ("mfcc_random", |r| r.scores.mfcc_random),
            ("mfcc_timbre_minus_random", |r| r.scores.mfcc_timbre - r.scores.mfcc_random),
            ("f1_low_100_minus_shuffled", |r| r.scores.f1_low_100 - r.f1_low_100_shuffled),
        ];
        for (metric, f) in columns {
            let values: Vec<f64> = records.iter().map(f).collect();
            summary.push(SummaryRow { metric: metric.into(), interval: bootstrap_mean(&values, resamples, 0.95, &mut rng)? });
        }
    }

    let kad_value = if loaded.len() >= 2 && references.len() >= 2 {
        let embedder = MfccStats::default();
        let gens: Vec<AudioClip> = loaded.iter().map(|l| l.generation.clone()).collect();
        let refs: Vec<AudioClip> = references.iter().map(|r| r.1.clone()).collect();
        let g = EmbeddingSet::embed_all("generated", &embedder, &gens)?;
        let r = EmbeddingSet::embed_all("reference", &embedder, &refs)?;
        Some(kad(&g, &r)?)
    } else {
        None
    };
    Ok(Report { header: MetricHeader::new(resamples, seed), records, summary, kad: kad_value, missing })
}

/// Runs `evaluate` for a manifest file and a directory of reference WAVs.
pub fn evaluate_run(gen_dir: impl AsRef<Path>, ref_dir: impl AsRef<Path>, resamples: usize, seed: u64) -> Result<Report> {
    let gen_dir = gen_dir.as_ref();
    let entries = read_manifest(gen_dir.join(MANIFEST))?;
    let references = crate::corpus::list_wavs(ref_dir)?
        .into_iter()
        .filter_map(|p| read_wav(&p).ok().map(|c| (p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(), c)))
        .collect::<Vec<_>>();
    evaluate(gen_dir, &entries, &references, resamples, seed)
}

/// `f(0..n)` spread over the available cores, results in index order.
pub fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let mut chunks: Vec<Vec<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w..n).step_by(workers).map(f).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    let mut iters: Vec<_> = chunks.iter_mut().map(|c| c.drain(..)).collect();
    for i in 0..n {
        out.push(iters[i % workers].next().expect("chunk sizes match"));
    }
    drop(iters);
    out
}
