//! Generation trace files ("GDT1").
//!
//! `"GDT1"`, a little-endian u32 version, a UTF-8 JSON body and a u64
//! FNV-1a checksum of the preceding bytes. The body holds the request
//! hash, checkpoint fingerprints, every decoding setting, the per-iteration
//! confirmations and the final token grid.

use std::path::Path;

use gesture_drums_core::codec::TokenGrid;
use gesture_drums_core::infer::{GenerationRequest, GenerationTrace, IterationRecord};
use gesture_drums_core::Fnv64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDT1";
pub const VERSION: u32 = 1;

/// Settings the generation ran with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub request_hash: String,
    pub model_fingerprint: String,
    pub codec_fingerprint: String,
    pub seed: u64,
    pub cfg_weight: f32,
    pub temperature: f64,
    pub causal_bias: f64,
    pub schedule: Vec<usize>,
    pub top_k: Option<usize>,
    pub include_prefix: bool,
    pub n_bands: usize,
    pub adaptive: bool,
    pub prefix_frames: usize,
    pub suffix_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GridBody {
    codebooks: usize,
    frames: usize,
    vocab: usize,
    hop: usize,
    tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Body {
    header: TraceHeader,
    iterations: Vec<IterationRecord>,
    grid: GridBody,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub trace: GenerationTrace,
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn unhex(s: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::data(format!("bad fingerprint `{s}`")))
}

impl TraceFile {
    pub fn new(req: &GenerationRequest, trace: GenerationTrace) -> Self {
        let g = &req.gen;
        TraceFile {
            header: TraceHeader {
                request_hash: hex(trace.request_hash),
                model_fingerprint: hex(trace.model_fingerprint),
                codec_fingerprint: hex(trace.codec_fingerprint),
                seed: g.seed,
                cfg_weight: g.cfg_weight,
                temperature: g.temperature,
                causal_bias: g.causal_bias,
                schedule: g.iters_per_codebook.clone(),
                top_k: g.top_k,
                include_prefix: g.include_prefix,
                n_bands: req.rhythm.n_bands,
                adaptive: req.rhythm.adaptive,
                prefix_frames: trace.prefix_frames,
                suffix_frames: trace.final_grid.frames() - trace.prefix_frames,
            },
            trace,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.trace.final_grid;
        let body = Body {
            header: self.header.clone(),
            iterations: self.trace.iterations.clone(),
            grid: GridBody { codebooks: g.codebooks(), frames: g.frames(), vocab: g.vocab(), hop: g.hop(), tokens: g.raw_tokens().to_vec() },
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(serde_json::to_string(&body).expect("trace serializes").as_bytes());
        let mut h = Fnv64::default();
        h.write(&out);
        out.extend_from_slice(&h.finish().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::data("not a GDT1 trace"));
        }
        let (head, sum) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv64::default();
        h.write(head);
        if h.finish().to_le_bytes() != sum {
            return Err(Error::data("trace checksum mismatch (truncated or corrupted file)"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("four bytes"));
        if version != VERSION {
            return Err(Error::data(format!("unsupported trace version {version}")));
        }
        let body: Body = serde_json::from_slice(&head[8..]).map_err(|e| Error::data(format!("trace body: {e}")))?;
        let g = body.grid;
        let grid = TokenGrid::from_tokens(g.codebooks, g.frames, g.vocab, g.hop, g.tokens)?;
        let hd = &body.header;
        let trace = GenerationTrace {
            request_hash: unhex(&hd.request_hash)?,
            model_fingerprint: unhex(&hd.model_fingerprint)?,
            codec_fingerprint: unhex(&hd.codec_fingerprint)?,
            seed: hd.seed,
            iters_per_codebook: hd.schedule.clone(),
            include_prefix: hd.include_prefix,
            prefix_frames: hd.prefix_frames,
            iterations: body.iterations,
            final_grid: grid,
        };
        Ok(TraceFile { header: body.header, trace })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| Error::data(format!("{}: {}", path.display(), e.message)))
    }
}
