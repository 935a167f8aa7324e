//! Rhythm-feature dumps ("GDF1").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      "GDF1"
//! version    u32 (currently 1)
//! bands      u32
//! frames     u32
//! hop        u32
//! n_mels     u32
//! flags      u8 (bit 0 quantized, bit 1 adaptive split)
//! splits     u32 count + u32 per split bin (last mel bin of each lower band)
//! values     bands·frames f64, band-major
//! checksum   u64 FNV-1a of every preceding byte
//! ```

use std::fmt::Write as _;
use std::path::Path;

use gesture_drums_core::dsp::{AudioClip, MelAnalyzer};
use gesture_drums_core::rhythm::{BandSplit, RhythmConfig, RhythmExtractor, RhythmFeatureMatrix};
use gesture_drums_core::Fnv64;

use crate::container::Reader;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDF1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub matrix: RhythmFeatureMatrix,
    pub split: BandSplit,
    pub hop: usize,
}

impl FeatureDump {
    /// Extracts features of `clip` with the pipeline mel settings.
    pub fn extract(clip: &AudioClip, config: RhythmConfig) -> Result<Self> {
        let extractor = RhythmExtractor::pipeline_default(config)?;
        let (matrix, split) = extractor.extract_with_split(clip)?;
        Ok(FeatureDump { matrix, split, hop: gesture_drums_core::dsp::HOP })
    }

    /// Center frequency of the last mel bin of each lower band.
    pub fn split_frequencies(&self) -> Vec<f64> {
        let fb = MelAnalyzer::pipeline_default();
        self.split.split_bins().iter().map(|&b| fb.filterbank().center_hz(b)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.matrix;
        let mut out = Vec::with_capacity(40 + 8 * m.values().len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, m.n_bands() as u32, m.frames() as u32, self.hop as u32, self.split.n_mels() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(m.is_quantized()) | (u8::from(self.split.is_adaptive()) << 1));
        out.extend_from_slice(&(self.split.split_bins().len() as u32).to_le_bytes());
        for &b in self.split.split_bins() {
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for v in m.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut h = Fnv64::default();
        h.write(&out);
        out.extend_from_slice(&h.finish().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::data("not a GDF1 feature dump"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv64::default();
        h.write(body);
        if h.finish().to_le_bytes() != sum {
            return Err(Error::data("feature dump checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported feature dump version {version}")));
        }
        let bands = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let hop = r.u32()? as usize;
        let n_mels = r.u32()? as usize;
        let flags = r.u8()?;
        let n_splits = r.u32()? as usize;
        let splits = (0..n_splits.min(8)).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if splits.len() != n_splits || n_splits + 1 != bands {
            return Err(Error::data("split count does not match band count"));
        }
        let count = bands.checked_mul(frames).ok_or_else(|| Error::data("feature dump size overflows"))?;
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != body.len() {
            return Err(Error::data("trailing bytes in feature dump"));
        }
        Ok(FeatureDump {
            matrix: RhythmFeatureMatrix::new(bands, frames, values, flags & 1 != 0)?,
            split: BandSplit::new(splits, n_mels, flags & 2 != 0)?,
            hop,
        })
    }

    /// Plain-text export: a `#` header line, then one line per band.
    pub fn to_text(&self) -> String {
        let m = &self.matrix;
        let mut s = format!(
            "# GDF1 bands={} frames={} hop={} n_mels={} quantized={} adaptive={} split_bins={:?}\n",
            m.n_bands(),
            m.frames(),
            self.hop,
            self.split.n_mels(),
            m.is_quantized(),
            self.split.is_adaptive(),
            self.split.split_bins()
        );
        for b in 0..m.n_bands() {
            let row: Vec<String> = m.band(b).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
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
