use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

/// `codebooks × frames` token ids with a parallel mask grid. Masked cells
/// keep whatever id was stored last, but [`TokenGrid::token`] refuses to
/// read them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    codebooks: usize,
    frames: usize,
    vocab: usize,
    hop: usize,
    tokens: Vec<u32>,
    masked: Vec<bool>,
}

impl TokenGrid {
    /// All-zero, fully unmasked grid.
    pub fn new(codebooks: usize, frames: usize, vocab: usize, hop: usize) -> Result<Self> {
        Self::from_parts(codebooks, frames, vocab, hop, vec![0; codebooks * frames], vec![false; codebooks * frames])
    }

    /// Codebook-major `tokens[c * frames + t]`, nothing masked.
    pub fn from_tokens(codebooks: usize, frames: usize, vocab: usize, hop: usize, tokens: Vec<u32>) -> Result<Self> {
        let n = tokens.len();
        Self::from_parts(codebooks, frames, vocab, hop, tokens, vec![false; n])
    }

    pub fn from_parts(
        codebooks: usize,
        frames: usize,
        vocab: usize,
        hop: usize,
        tokens: Vec<u32>,
        masked: Vec<bool>,
    ) -> Result<Self> {
        if codebooks == 0 || vocab < 2 || hop == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "token grid needs ≥1 codebook, vocabulary ≥2 and a hop (got {codebooks}, {vocab}, {hop})"
            )));
        }
        if tokens.len() != codebooks * frames || masked.len() != tokens.len() {
            return Err(Error::Shape(alloc::format!(
                "{} tokens / {} mask flags for a {codebooks}×{frames} grid",
                tokens.len(),
                masked.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::InvalidArgument(alloc::format!("token {bad} outside vocabulary of {vocab}")));
        }
        Ok(TokenGrid { codebooks, frames, vocab, hop, tokens, masked })
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    fn idx(&self, c: usize, t: usize) -> usize {
        assert!(c < self.codebooks && t < self.frames, "cell ({c}, {t}) outside grid");
        c * self.frames + t
    }

    pub fn token(&self, c: usize, t: usize) -> Result<u32> {
        let i = self.idx(c, t);
        if self.masked[i] {
            return Err(Error::MaskedCell { codebook: c, frame: t });
        }
        Ok(self.tokens[i])
    }

    pub fn is_masked(&self, c: usize, t: usize) -> bool {
        self.masked[self.idx(c, t)]
    }

    /// Stores `token` without touching the mask flag.
    pub fn set(&mut self, c: usize, t: usize, token: u32) -> Result<()> {
        if token as usize >= self.vocab {
            return Err(Error::InvalidArgument(alloc::format!("token {token} outside vocabulary of {}", self.vocab)));
        }
        let i = self.idx(c, t);
        self.tokens[i] = token;
        Ok(())
    }

    pub fn mask(&mut self, c: usize, t: usize) {
        let i = self.idx(c, t);
        self.masked[i] = true;
    }

    /// Stores `token` and clears the mask flag.
    pub fn confirm(&mut self, c: usize, t: usize, token: u32) -> Result<()> {
        self.set(c, t, token)?;
        let i = self.idx(c, t);
        self.masked[i] = false;
        Ok(())
    }

    pub fn mask_frames(&mut self, codebooks: Range<usize>, frames: Range<usize>) {
        for c in codebooks {
            for t in frames.clone() {
                self.mask(c, t);
            }
        }
    }

    pub fn any_masked(&self) -> bool {
        self.masked.iter().any(|&m| m)
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    /// Frames where codebook `c` is masked, ascending.
    pub fn masked_frames(&self, c: usize) -> Vec<usize> {
        (0..self.frames).filter(|&t| self.is_masked(c, t)).collect()
    }

    /// Lowest masked codebook at frame `t`.
    pub fn lowest_masked(&self, t: usize) -> Option<usize> {
        (0..self.codebooks).find(|&c| self.is_masked(c, t))
    }

    /// Stored ids including those under masks, codebook-major.
    pub fn raw_tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn mask_flags(&self) -> &[bool] {
        &self.masked
    }

    pub fn slice_frames(&self, range: Range<usize>) -> Result<TokenGrid> {
        if range.start > range.end || range.end > self.frames {
            return Err(Error::Shape(alloc::format!(
                "frames {}..{} outside grid of {}",
                range.start,
                range.end,
                self.frames
            )));
        }
        let len = range.end - range.start;
        let mut tokens = Vec::with_capacity(self.codebooks * len);
        let mut masked = Vec::with_capacity(self.codebooks * len);
        for c in 0..self.codebooks {
            let row = c * self.frames;
            tokens.extend_from_slice(&self.tokens[row + range.start..row + range.end]);
            masked.extend_from_slice(&self.masked[row + range.start..row + range.end]);
        }
        TokenGrid::from_parts(self.codebooks, len, self.vocab, self.hop, tokens, masked)
    }

    /// Frames of `self` followed by frames of `other`.
    pub fn concat(&self, other: &TokenGrid) -> Result<TokenGrid> {
        if (self.codebooks, self.vocab, self.hop) != (other.codebooks, other.vocab, other.hop) {
            return Err(Error::Shape("concatenated grids disagree on codebooks, vocabulary or hop".into()));
        }
        let frames = self.frames + other.frames;
        let mut tokens = Vec::with_capacity(self.codebooks * frames);
        let mut masked = Vec::with_capacity(self.codebooks * frames);
        for c in 0..self.codebooks {
            tokens.extend_from_slice(&self.tokens[c * self.frames..(c + 1) * self.frames]);
            tokens.extend_from_slice(&other.tokens[c * other.frames..(c + 1) * other.frames]);
            masked.extend_from_slice(&self.masked[c * self.frames..(c + 1) * self.frames]);
            masked.extend_from_slice(&other.masked[c * other.frames..(c + 1) * other.frames]);
        }
        TokenGrid::from_parts(self.codebooks, frames, self.vocab, self.hop, tokens, masked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_cells_are_unreadable() {
        let mut g = TokenGrid::new(3, 4, 8, 512).unwrap();
        g.set(1, 2, 5).unwrap();
        assert_eq!(g.token(1, 2).unwrap(), 5);
        g.mask(1, 2);
        assert_eq!(g.token(1, 2), Err(Error::MaskedCell { codebook: 1, frame: 2 }));
        assert_eq!(g.lowest_masked(2), Some(1));
        assert_eq!(g.lowest_masked(0), None);
        g.confirm(1, 2, 7).unwrap();
        assert_eq!(g.token(1, 2).unwrap(), 7);
        assert!(!g.any_masked());
        assert!(g.set(0, 0, 8).is_err());
    }

    #[test]
    fn slicing_and_concat_round_trip() {
        let tokens: Vec<u32> = (0..12).map(|i| i % 8).collect();
        let mut g = TokenGrid::from_tokens(2, 6, 8, 4, tokens).unwrap();
        g.mask(1, 4);
        let a = g.slice_frames(0..2).unwrap();
        let b = g.slice_frames(2..6).unwrap();
        assert_eq!(a.concat(&b).unwrap(), g);
        assert_eq!(b.masked_frames(1), vec![2]);
        assert!(g.slice_frames(4..7).is_err());
    }

    #[test]
    fn validation() {
        assert!(TokenGrid::from_tokens(1, 2, 4, 512, vec![0, 4]).is_err());
        assert!(TokenGrid::from_tokens(1, 2, 4, 512, vec![0]).is_err());
        assert!(TokenGrid::new(0, 2, 4, 512).is_err());
    }
}
