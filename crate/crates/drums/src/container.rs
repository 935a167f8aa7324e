//! Versioned binary tensor container shared by codec and model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes ("GDC1" codec, "GDM1" model)
//! version    u32 (currently 1)
//! config     u32 byte length + UTF-8 TOML
//! tensors    u32 count, then per tensor:
//!            u16 name length + UTF-8 name, u32 rows, u32 cols,
//!            rows·cols f32 values
//! checksum   u64 FNV-1a of every preceding byte
//! ```

use gesture_drums_core::Fnv64;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub config: String,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::data(format!("checkpoint lacks tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut h = Fnv64::default();
        h.write(&out);
        out.extend_from_slice(&h.finish().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != magic {
            return Err(Error::data(format!("not a {} file", String::from_utf8_lossy(magic))));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv64::default();
        h.write(body);
        if h.finish().to_le_bytes() != sum {
            return Err(Error::data("checksum mismatch (truncated or corrupted file)"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported container version {version}")));
        }
        let n = r.u32()? as usize;
        let config = r.utf8(n)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = r.utf8(n)?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::data("tensor size overflows"))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(Tensor { name, rows, cols, values });
        }
        if r.pos != body.len() {
            return Err(Error::data("trailing bytes after the last tensor"));
        }
        Ok(Container { magic: *magic, config, tensors })
    }
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::data("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    pub fn utf8(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::data("invalid UTF-8 in header"))
    }
}
