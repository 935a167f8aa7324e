use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::matmul_nt;
use crate::{Error, Result};

/// Output of [`ResidualVq::quantize`] for `frames` latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    pub frames: usize,
    /// Codebook-major `tokens[c * frames + t]`.
    pub tokens: Vec<u32>,
    /// `frames × dim`, the running sum of selected codewords.
    pub quantized: Vec<f32>,
    /// `codebooks × frames × dim`: the residual each quantizer saw.
    pub residuals: Vec<f32>,
}

impl Quantized {
    /// Joins the frames of several quantizations of the same quantizer.
    pub fn concat(parts: &[Quantized], codebooks: usize, dim: usize) -> Quantized {
        let frames: usize = parts.iter().map(|p| p.frames).sum();
        let mut tokens = Vec::with_capacity(codebooks * frames);
        let mut residuals = Vec::with_capacity(codebooks * frames * dim);
        for c in 0..codebooks {
            for p in parts {
                tokens.extend_from_slice(&p.tokens[c * p.frames..(c + 1) * p.frames]);
                residuals.extend_from_slice(&p.residuals[c * p.frames * dim..(c + 1) * p.frames * dim]);
            }
        }
        let quantized = parts.iter().flat_map(|p| p.quantized.iter().copied()).collect();
        Quantized { frames, tokens, quantized, residuals }
    }
}

/// Residual vector quantizer with exponential-moving-average codebooks.
///
/// Code 0 of every codebook is the zero vector and never moves, so the
/// nearest-codeword choice can always leave the residual unchanged and the
/// residual norm never grows from one quantizer to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVq {
    codebooks: usize,
    size: usize,
    dim: usize,
    embed: Vec<f32>,
    counts: Vec<f64>,
    sums: Vec<f64>,
    initialized: bool,
}

impl ResidualVq {
    pub fn new(codebooks: usize, size: usize, dim: usize) -> Self {
        ResidualVq {
            codebooks,
            size,
            dim,
            embed: vec![0.0; codebooks * size * dim],
            counts: vec![0.0; codebooks * size],
            sums: vec![0.0; codebooks * size * dim],
            initialized: false,
        }
    }

    /// Rebuilds a quantizer from stored codewords (`codebooks × size × dim`).
    pub fn from_embeddings(codebooks: usize, size: usize, dim: usize, embed: Vec<f32>) -> Result<Self> {
        if embed.len() != codebooks * size * dim {
            return Err(Error::Shape(alloc::format!(
                "{} codebook values for {codebooks}×{size}×{dim}",
                embed.len()
            )));
        }
        let mut q = Self::new(codebooks, size, dim);
        for c in 0..codebooks {
            if embed[c * size * dim..(c * size + 1) * dim].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument("code 0 of every codebook must be the zero vector".into()));
            }
        }
        for (i, &e) in embed.iter().enumerate() {
            q.sums[i] = e as f64;
        }
        q.counts.iter_mut().for_each(|n| *n = 1.0);
        q.embed = embed;
        q.initialized = true;
        Ok(q)
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embed
    }

    pub fn codeword(&self, c: usize, k: usize) -> &[f32] {
        let o = (c * self.size + k) * self.dim;
        &self.embed[o..o + self.dim]
    }

    fn book(&self, c: usize) -> &[f32] {
        &self.embed[c * self.size * self.dim..(c + 1) * self.size * self.dim]
    }

    /// Nearest code per row of `r` (`frames × dim`) within codebook `c`.
    fn nearest(&self, c: usize, r: &[f32], frames: usize) -> Vec<u32> {
        let (k, d) = (self.size, self.dim);
        let book = self.book(c);
        let norms: Vec<f32> = book.chunks_exact(d).map(|e| e.iter().map(|v| v * v).sum()).collect();
        let mut dots = vec![0.0f32; frames * k];
        matmul_nt(r, book, &mut dots, frames, d, k, false);
        (0..frames)
            .map(|t| {
                let row = &dots[t * k..(t + 1) * k];
                let mut best = 0usize;
                let mut best_d = f32::INFINITY;
                for j in 0..k {
                    let dist = norms[j] - 2.0 * row[j];
                    if dist < best_d {
                        best_d = dist;
                        best = j;
                    }
                }
                // exact check against the zero code guards against rounding in
                // the expanded distance
                let rt = &r[t * d..(t + 1) * d];
                let e = &book[best * d..(best + 1) * d];
                let exact: f32 = rt.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                let keep: f32 = rt.iter().map(|a| a * a).sum();
                if exact <= keep {
                    best as u32
                } else {
                    0
                }
            })
            .collect()
    }

    /// Quantizes `z` (`frames × dim`).
    pub fn quantize(&self, z: &[f32], frames: usize) -> Quantized {
        assert_eq!(z.len(), frames * self.dim);
        let d = self.dim;
        let mut residual = z.to_vec();
        let mut quantized = vec![0.0f32; frames * d];
        let mut tokens = Vec::with_capacity(self.codebooks * frames);
        let mut residuals = Vec::with_capacity(self.codebooks * frames * d);
        for c in 0..self.codebooks {
            residuals.extend_from_slice(&residual);
            let codes = self.nearest(c, &residual, frames);
            for (t, &code) in codes.iter().enumerate() {
                let e = self.codeword(c, code as usize);
                for i in 0..d {
                    quantized[t * d + i] += e[i];
                    residual[t * d + i] -= e[i];
                }
            }
            tokens.extend_from_slice(&codes);
        }
        Quantized { frames, tokens, quantized, residuals }
    }

    /// Sum of codewords, `frames × dim`, accumulated in codebook order.
    pub fn lookup(&self, tokens: &[u32], frames: usize) -> Vec<f32> {
        let d = self.dim;
        let mut out = vec![0.0f32; frames * d];
        for c in 0..self.codebooks {
            for t in 0..frames {
                let e = self.codeword(c, tokens[c * frames + t] as usize);
                out[t * d..(t + 1) * d].iter_mut().zip(e).for_each(|(o, &v)| *o += v);
            }
        }
        out
    }

    /// Seeds codes `1..size` of each codebook with randomly chosen residuals
    /// of `z` (`frames × dim`), codebook by codebook.
    pub fn initialize<R: Rng + ?Sized>(&mut self, z: &[f32], frames: usize, rng: &mut R) {
        let d = self.dim;
        let mut residual = z.to_vec();
        for c in 0..self.codebooks {
            for k in 1..self.size {
                let t = rng.gen_range(0..frames);
                let o = (c * self.size + k) * d;
                self.embed[o..o + d].copy_from_slice(&residual[t * d..(t + 1) * d]);
                self.counts[c * self.size + k] = 1.0;
                for i in 0..d {
                    self.sums[o + i] = residual[t * d + i] as f64;
                }
            }
            let codes = self.nearest(c, &residual, frames);
            for (t, &code) in codes.iter().enumerate() {
                let o = (c * self.size + code as usize) * d;
                for i in 0..d {
                    residual[t * d + i] -= self.embed[o + i];
                }
            }
        }
        self.initialized = true;
    }

    /// EMA codebook update from the residuals and tokens of a batch
    /// (concatenated over examples). Codes whose usage count falls below
    /// `dead_threshold` restart at a random batch residual. Returns the
    /// number of restarts.
    pub fn ema_update<R: Rng + ?Sized>(
        &mut self,
        q: &Quantized,
        decay: f64,
        dead_threshold: f64,
        rng: &mut R,
    ) -> usize {
        let (k, d, frames) = (self.size, self.dim, q.frames);
        let mut restarts = 0;
        for c in 0..self.codebooks {
            let mut n = vec![0.0f64; k];
            let mut s = vec![0.0f64; k * d];
            let res = &q.residuals[c * frames * d..(c + 1) * frames * d];
            for t in 0..frames {
                let code = q.tokens[c * frames + t] as usize;
                n[code] += 1.0;
                for i in 0..d {
                    s[code * d + i] += res[t * d + i] as f64;
                }
            }
            for j in 1..k {
                let ci = c * k + j;
                self.counts[ci] = decay * self.counts[ci] + (1.0 - decay) * n[j];
                for i in 0..d {
                    let si = ci * d + i;
                    self.sums[si] = decay * self.sums[si] + (1.0 - decay) * s[j * d + i];
                }
                if self.counts[ci] < dead_threshold && frames > 0 {
                    let t = rng.gen_range(0..frames);
                    self.counts[ci] = 1.0;
                    for i in 0..d {
                        self.sums[ci * d + i] = res[t * d + i] as f64;
                    }
                    restarts += 1;
                }
                for i in 0..d {
                    self.embed[ci * d + i] = (self.sums[ci * d + i] / self.counts[ci]) as f32;
                }
            }
        }
        restarts
    }
}
