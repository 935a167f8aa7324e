//! Masked token transformer: per-codebook embeddings with a shared mask
//! embedding, residual zeroing above the lowest masked codebook, gated
//! rhythm projection, pre-norm rotary transformer blocks and per-codebook
//! output heads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::codec::TokenGrid;
use crate::linalg::{gemm, Real, Strides};
use crate::nn::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows, ParamId, ParamStore,
    Rope,
};
use crate::rhythm::RhythmFeatureMatrix;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub codebooks: usize,
    pub vocab: usize,
    pub bands: usize,
    pub max_frames: usize,
    pub ff_mult: usize,
    pub rope_base: f64,
    pub init_std: f64,
}

impl ModelConfig {
    /// Small CPU-trainable configuration.
    pub fn desk() -> Self {
        ModelConfig {
            n_layers: 4,
            hidden: 128,
            n_heads: 4,
            codebooks: 9,
            vocab: 256,
            bands: 2,
            max_frames: 1024,
            ff_mult: 4,
            rope_base: 10_000.0,
            init_std: 0.02,
        }
    }

    /// 12 blocks, hidden 512, 8 heads, 9 codebooks of 1024 tokens.
    pub fn paper() -> Self {
        ModelConfig { n_layers: 12, hidden: 512, n_heads: 8, vocab: 1024, ..Self::desk() }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.hidden * self.ff_mult
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("model config: {msg}")));
        if self.n_layers == 0 || self.hidden == 0 || self.n_heads == 0 || self.ff_mult == 0 {
            return bad("layers, hidden, heads and ff_mult must be positive");
        }
        if !self.hidden.is_multiple_of(self.n_heads) || !self.head_dim().is_multiple_of(2) {
            return bad("hidden must split into an even head dimension");
        }
        if self.codebooks == 0 || self.vocab < 2 {
            return bad("need ≥1 codebook and vocabulary ≥2");
        }
        if !(1..=crate::rhythm::MAX_BANDS).contains(&self.bands) {
            return bad("rhythm bands must be 1..=4");
        }
        if self.max_frames == 0 || self.rope_base.is_nan() || self.rope_base <= 1.0 || self.init_std.is_nan() || self.init_std <= 0.0 {
            return bad("max_frames, rope_base and init_std must be positive");
        }
        Ok(())
    }

    /// Trainable parameters, in closed form.
    pub fn param_count(&self) -> usize {
        let (h, c, k, f) = (self.hidden, self.codebooks, self.vocab, self.ff_dim());
        let per_layer = 2 * h + (h * 3 * h + 3 * h) + (h * h + h) + 2 * h + (h * f + f) + (f * h + h);
        c * k * h + h + self.bands * h + self.n_layers * per_layer + 2 * h + c * (h * k + k)
    }
}

/// Everything one forward pass reads.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub grid: &'a TokenGrid,
    pub rhythm: &'a RhythmFeatureMatrix,
    pub target_codebook: usize,
    /// Unconditional pass: rhythm features treated as zero.
    pub rhythm_dropped: bool,
}

/// `frames × vocab` logits for one codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<T: Real = f32> {
    pub frames: usize,
    pub vocab: usize,
    pub values: Vec<T>,
}

impl<T: Real> Logits<T> {
    pub fn row(&self, t: usize) -> &[T] {
        &self.values[t * self.vocab..(t + 1) * self.vocab]
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wqkv: ParamId,
    bqkv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    tok: Vec<ParamId>,
    mask: ParamId,
    rhythm_w: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: Vec<ParamId>,
    head_b: Vec<ParamId>,
}

struct LayerCache<T: Real> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    ln1_out: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    ln2_out: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
}

/// Activations kept from [`MaskedTransformer::forward_train`].
pub struct ForwardCache<T: Real = f32> {
    frames: usize,
    target_codebook: usize,
    lowest_masked: Vec<Option<usize>>,
    rhythm_on: Vec<bool>,
    layers: Vec<LayerCache<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    final_out: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct MaskedTransformer<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: Ids,
    rope: Rope<T>,
}

impl<T: Real> MaskedTransformer<T> {
    /// Allocates the parameter layout with every value zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (h, k, f) = (config.hidden, config.vocab, config.ff_dim());
        let mut p = ParamStore::new();
        let tok = (0..config.codebooks).map(|c| p.add(format!("tok.{c}"), k, h, false)).collect();
        let mask = p.add("mask", 1, h, false);
        let rhythm_w = p.add("rhythm.w", config.bands, h, true);
        let layers = (0..config.n_layers)
            .map(|l| LayerIds {
                ln1_g: p.add(format!("layers.{l}.ln1.g"), 1, h, false),
                ln1_b: p.add(format!("layers.{l}.ln1.b"), 1, h, false),
                wqkv: p.add(format!("layers.{l}.attn.wqkv"), h, 3 * h, true),
                bqkv: p.add(format!("layers.{l}.attn.bqkv"), 1, 3 * h, false),
                wo: p.add(format!("layers.{l}.attn.wo"), h, h, true),
                bo: p.add(format!("layers.{l}.attn.bo"), 1, h, false),
                ln2_g: p.add(format!("layers.{l}.ln2.g"), 1, h, false),
                ln2_b: p.add(format!("layers.{l}.ln2.b"), 1, h, false),
                w1: p.add(format!("layers.{l}.ff.w1"), h, f, true),
                b1: p.add(format!("layers.{l}.ff.b1"), 1, f, false),
                w2: p.add(format!("layers.{l}.ff.w2"), f, h, true),
                b2: p.add(format!("layers.{l}.ff.b2"), 1, h, false),
            })
            .collect();
        let lnf_g = p.add("ln_f.g", 1, h, false);
        let lnf_b = p.add("ln_f.b", 1, h, false);
        let head_w = (0..config.codebooks).map(|c| p.add(format!("head.{c}.w"), h, k, true)).collect();
        let head_b = (0..config.codebooks).map(|c| p.add(format!("head.{c}.b"), 1, k, false)).collect();
        debug_assert_eq!(p.len(), config.param_count());
        let rope = Rope::new(config.head_dim(), config.max_frames, config.rope_base);
        Ok(MaskedTransformer {
            config,
            params: p,
            ids: Ids { tok, mask, rhythm_w, layers, lnf_g, lnf_b, head_w, head_b },
            rope,
        })
    }

    /// Normal(0, init_std) weights, residual output projections scaled by
    /// `1/sqrt(2·layers)`, unit norm gains, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeroed(config)?;
        let std = m.config.init_std;
        let resid_std = std / libm::sqrt(2.0 * m.config.n_layers as f64);
        let ids = m.ids.clone();
        let p = &mut m.params;
        for &id in &ids.tok {
            p.fill_normal(id, std, rng);
        }
        p.fill_normal(ids.mask, std, rng);
        p.fill_normal(ids.rhythm_w, std, rng);
        for l in &ids.layers {
            p.fill(l.ln1_g, T::ONE);
            p.fill(l.ln2_g, T::ONE);
            p.fill_normal(l.wqkv, std, rng);
            p.fill_normal(l.wo, resid_std, rng);
            p.fill_normal(l.w1, std, rng);
            p.fill_normal(l.w2, resid_std, rng);
        }
        p.fill(ids.lnf_g, T::ONE);
        for &id in &ids.head_w {
            p.fill_normal(id, std, rng);
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> MaskedTransformer<U> {
        MaskedTransformer {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
            rope: Rope::new(self.config.head_dim(), self.config.max_frames, self.config.rope_base),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    /// Parameter range of the output head for codebook `c` (weights and bias).
    pub fn head_ranges(&self, c: usize) -> [Range<usize>; 2] {
        [self.params.range(self.ids.head_w[c]), self.params.range(self.ids.head_b[c])]
    }

    fn check(&self, input: &ModelInput) -> Result<usize> {
        let cfg = &self.config;
        let g = input.grid;
        if g.codebooks() != cfg.codebooks || g.vocab() != cfg.vocab {
            return Err(Error::Shape(format!(
                "grid has {} codebooks of {} tokens, model expects {} of {}",
                g.codebooks(),
                g.vocab(),
                cfg.codebooks,
                cfg.vocab
            )));
        }
        if input.rhythm.n_bands() != cfg.bands || input.rhythm.frames() != g.frames() {
            return Err(Error::Shape(format!(
                "rhythm features are {}×{}, expected {}×{}",
                input.rhythm.n_bands(),
                input.rhythm.frames(),
                cfg.bands,
                g.frames()
            )));
        }
        if g.frames() == 0 || g.frames() > cfg.max_frames {
            return Err(Error::Shape(format!("{} frames outside 1..={}", g.frames(), cfg.max_frames)));
        }
        if input.target_codebook >= cfg.codebooks {
            return Err(Error::InvalidArgument(format!("target codebook {} ≥ {}", input.target_codebook, cfg.codebooks)));
        }
        Ok(g.frames())
    }

    fn embed_impl(&self, input: &ModelInput) -> (Vec<T>, Vec<Option<usize>>, Vec<bool>) {
        let h = self.config.hidden;
        let t_len = input.grid.frames();
        let mut x = vec![T::ZERO; t_len * h];
        let mut lowest = Vec::with_capacity(t_len);
        let mut rhythm_on = Vec::with_capacity(t_len);
        let mask = self.params.get(self.ids.mask);
        let rw = self.params.get(self.ids.rhythm_w);
        for t in 0..t_len {
            let row = &mut x[t * h..(t + 1) * h];
            let low = input.grid.lowest_masked(t);
            let visible = low.unwrap_or(self.config.codebooks);
            for c in 0..visible {
                let tok = input.grid.raw_tokens()[c * t_len + t] as usize;
                let e = &self.params.get(self.ids.tok[c])[tok * h..(tok + 1) * h];
                row.iter_mut().zip(e).for_each(|(v, &w)| *v += w);
            }
            if low.is_some() {
                row.iter_mut().zip(mask).for_each(|(v, &w)| *v += w);
            }
            let on = low.is_some() && !input.rhythm_dropped;
            if on {
                let mut proj = vec![T::ZERO; h];
                for b in 0..self.config.bands {
                    let r = T::from_f64(input.rhythm.get(b, t));
                    proj.iter_mut().zip(&rw[b * h..(b + 1) * h]).for_each(|(p, &w)| *p += r * w);
                }
                row.iter_mut().zip(&proj).for_each(|(v, &p)| *v += p);
            }
            lowest.push(low);
            rhythm_on.push(on);
        }
        (x, lowest, rhythm_on)
    }

    /// Summed token, mask and rhythm embeddings, `frames × hidden`.
    pub fn embed(&self, input: &ModelInput) -> Result<Vec<T>> {
        self.check(input)?;
        Ok(self.embed_impl(input).0)
    }

    fn run(&self, input: &ModelInput, keep: bool) -> Result<(Logits<T>, Option<ForwardCache<T>>)> {
        let t_len = self.check(input)?;
        let cfg = &self.config;
        let (h, f, nh, dh) = (cfg.hidden, cfg.ff_dim(), cfg.n_heads, cfg.head_dim());
        let scale = T::from_f64(1.0 / libm::sqrt(dh as f64));
        let (mut x, lowest, rhythm_on) = self.embed_impl(input);
        let mut caches = Vec::new();
        for ids in &self.ids.layers {
            let p = &self.params;
            let mut ln1_xhat = vec![T::ZERO; t_len * h];
            let mut ln1_rstd = vec![T::ZERO; t_len];
            let mut ln1_out = vec![T::ZERO; t_len * h];
            layer_norm(&x, t_len, h, p.get(ids.ln1_g), p.get(ids.ln1_b), &mut ln1_out, &mut ln1_xhat, &mut ln1_rstd);
            let mut qkv = vec![T::ZERO; t_len * 3 * h];
            linear(&ln1_out, t_len, h, p.get(ids.wqkv), Some(p.get(ids.bqkv)), 3 * h, &mut qkv);
            for head in 0..nh {
                self.rope.apply(&mut qkv, t_len, 3 * h, head * dh, false);
                self.rope.apply(&mut qkv, t_len, 3 * h, h + head * dh, false);
            }
            let mut probs = vec![T::ZERO; nh * t_len * t_len];
            let mut attn = vec![T::ZERO; t_len * h];
            let qkv_rows = Strides { row: 3 * h as isize, col: 1 };
            for head in 0..nh {
                let pr = &mut probs[head * t_len * t_len..(head + 1) * t_len * t_len];
                gemm(
                    t_len,
                    dh,
                    t_len,
                    scale,
                    &qkv[head * dh..],
                    qkv_rows,
                    &qkv[h + head * dh..],
                    Strides { row: 1, col: 3 * h as isize },
                    T::ZERO,
                    pr,
                    Strides::row_major(t_len),
                );
                softmax_rows(pr, t_len);
                gemm(
                    t_len,
                    t_len,
                    dh,
                    T::ONE,
                    pr,
                    Strides::row_major(t_len),
                    &qkv[2 * h + head * dh..],
                    qkv_rows,
                    T::ZERO,
                    &mut attn[head * dh..],
                    Strides::row_major(h),
                );
            }
            let mut proj = vec![T::ZERO; t_len * h];
            linear(&attn, t_len, h, p.get(ids.wo), Some(p.get(ids.bo)), h, &mut proj);
            x.iter_mut().zip(&proj).for_each(|(a, b)| *a += *b);

            let mut ln2_xhat = vec![T::ZERO; t_len * h];
            let mut ln2_rstd = vec![T::ZERO; t_len];
            let mut ln2_out = vec![T::ZERO; t_len * h];
            layer_norm(&x, t_len, h, p.get(ids.ln2_g), p.get(ids.ln2_b), &mut ln2_out, &mut ln2_xhat, &mut ln2_rstd);
            let mut ff_pre = vec![T::ZERO; t_len * f];
            linear(&ln2_out, t_len, h, p.get(ids.w1), Some(p.get(ids.b1)), f, &mut ff_pre);
            let mut ff_act = vec![T::ZERO; t_len * f];
            gelu(&ff_pre, &mut ff_act);
            linear(&ff_act, t_len, f, p.get(ids.w2), Some(p.get(ids.b2)), h, &mut proj);
            x.iter_mut().zip(&proj).for_each(|(a, b)| *a += *b);
            if keep {
                caches.push(LayerCache {
                    ln1_xhat,
                    ln1_rstd,
                    ln1_out,
                    qkv,
                    probs,
                    attn,
                    ln2_xhat,
                    ln2_rstd,
                    ln2_out,
                    ff_pre,
                    ff_act,
                });
            }
        }
        let p = &self.params;
        let mut lnf_xhat = vec![T::ZERO; t_len * h];
        let mut lnf_rstd = vec![T::ZERO; t_len];
        let mut final_out = vec![T::ZERO; t_len * h];
        layer_norm(&x, t_len, h, p.get(self.ids.lnf_g), p.get(self.ids.lnf_b), &mut final_out, &mut lnf_xhat, &mut lnf_rstd);
        let c = input.target_codebook;
        let k = cfg.vocab;
        let mut values = vec![T::ZERO; t_len * k];
        linear(&final_out, t_len, h, p.get(self.ids.head_w[c]), Some(p.get(self.ids.head_b[c])), k, &mut values);
        let logits = Logits { frames: t_len, vocab: k, values };
        let cache = keep.then_some(ForwardCache {
            frames: t_len,
            target_codebook: c,
            lowest_masked: lowest,
            rhythm_on,
            layers: caches,
            lnf_xhat,
            lnf_rstd,
            final_out,
        });
        Ok((logits, cache))
    }

    /// Logits for `input.target_codebook` at every frame.
    pub fn forward(&self, input: &ModelInput) -> Result<Logits<T>> {
        Ok(self.run(input, false)?.0)
    }

    /// Independent forward passes; examples never interact.
    pub fn forward_batch(&self, inputs: &[ModelInput]) -> Result<Vec<Logits<T>>> {
        inputs.iter().map(|i| self.forward(i)).collect()
    }

    /// Forward pass that keeps the activations needed by
    /// [`MaskedTransformer::backward`].
    pub fn forward_train(&self, input: &ModelInput) -> Result<(Logits<T>, ForwardCache<T>)> {
        let (logits, cache) = self.run(input, true)?;
        Ok((logits, cache.expect("cache requested")))
    }

    /// Accumulates `∂L/∂θ` into `grads` (laid out like [`Self::params`])
    /// given `∂L/∂logits`.
    pub fn backward(&self, input: &ModelInput, cache: &ForwardCache<T>, dlogits: &[T], grads: &mut [T]) -> Result<()> {
        let cfg = &self.config;
        let (h, f, nh, dh, k) = (cfg.hidden, cfg.ff_dim(), cfg.n_heads, cfg.head_dim(), cfg.vocab);
        let t_len = cache.frames;
        if dlogits.len() != t_len * k || grads.len() != self.params.len() || cache.layers.len() != cfg.n_layers {
            return Err(Error::Shape("backward buffers do not match the forward pass".into()));
        }
        let p = &self.params;
        let scale = T::from_f64(1.0 / libm::sqrt(dh as f64));
        let c = cache.target_codebook;

        let mut dx = vec![T::ZERO; t_len * h];
        {
            let (dw, db) = pair_mut(grads, p.range(self.ids.head_w[c]), p.range(self.ids.head_b[c]));
            let mut dfinal = vec![T::ZERO; t_len * h];
            linear_backward(&cache.final_out, dlogits, t_len, h, k, p.get(self.ids.head_w[c]), dw, Some(db), Some(&mut dfinal));
            let (dg, dbeta) = pair_mut(grads, p.range(self.ids.lnf_g), p.range(self.ids.lnf_b));
            layer_norm_backward(&dfinal, &cache.lnf_xhat, &cache.lnf_rstd, t_len, h, p.get(self.ids.lnf_g), dg, dbeta, &mut dx);
        }

        for (ids, lc) in self.ids.layers.iter().zip(&cache.layers).rev() {
            // feed-forward branch
            let mut d_act = vec![T::ZERO; t_len * f];
            let (dw, db) = pair_mut(grads, p.range(ids.w2), p.range(ids.b2));
            linear_backward(&lc.ff_act, &dx, t_len, f, h, p.get(ids.w2), dw, Some(db), Some(&mut d_act));
            let mut d_pre = vec![T::ZERO; t_len * f];
            gelu_backward(&lc.ff_pre, &d_act, &mut d_pre);
            let mut d_ln2 = vec![T::ZERO; t_len * h];
            let (dw, db) = pair_mut(grads, p.range(ids.w1), p.range(ids.b1));
            linear_backward(&lc.ln2_out, &d_pre, t_len, h, f, p.get(ids.w1), dw, Some(db), Some(&mut d_ln2));
            let mut dx_mid = dx.clone();
            let (dg, dbeta) = pair_mut(grads, p.range(ids.ln2_g), p.range(ids.ln2_b));
            layer_norm_backward(&d_ln2, &lc.ln2_xhat, &lc.ln2_rstd, t_len, h, p.get(ids.ln2_g), dg, dbeta, &mut dx_mid);

            // attention branch
            let mut d_attn = vec![T::ZERO; t_len * h];
            let (dw, db) = pair_mut(grads, p.range(ids.wo), p.range(ids.bo));
            linear_backward(&lc.attn, &dx_mid, t_len, h, h, p.get(ids.wo), dw, Some(db), Some(&mut d_attn));
            let mut dqkv = vec![T::ZERO; t_len * 3 * h];
            let mut dp = vec![T::ZERO; t_len * t_len];
            let qkv_rows = Strides { row: 3 * h as isize, col: 1 };
            let head_rows = Strides { row: h as isize, col: 1 };
            for head in 0..nh {
                let pr = &lc.probs[head * t_len * t_len..(head + 1) * t_len * t_len];
                gemm(
                    t_len,
                    dh,
                    t_len,
                    T::ONE,
                    &d_attn[head * dh..],
                    head_rows,
                    &lc.qkv[2 * h + head * dh..],
                    Strides { row: 1, col: 3 * h as isize },
                    T::ZERO,
                    &mut dp,
                    Strides::row_major(t_len),
                );
                gemm(
                    t_len,
                    t_len,
                    dh,
                    T::ONE,
                    pr,
                    Strides::transposed(t_len),
                    &d_attn[head * dh..],
                    head_rows,
                    T::ZERO,
                    &mut dqkv[2 * h + head * dh..],
                    qkv_rows,
                );
                for i in 0..t_len {
                    let prow = &pr[i * t_len..(i + 1) * t_len];
                    let drow = &mut dp[i * t_len..(i + 1) * t_len];
                    let s: f64 = prow.iter().zip(drow.iter()).map(|(&a, &b)| a.to_f64() * b.to_f64()).sum();
                    drow.iter_mut().zip(prow).for_each(|(d, &pv)| *d = T::from_f64(pv.to_f64() * (d.to_f64() - s)) * scale);
                }
                gemm(
                    t_len,
                    t_len,
                    dh,
                    T::ONE,
                    &dp,
                    Strides::row_major(t_len),
                    &lc.qkv[h + head * dh..],
                    qkv_rows,
                    T::ZERO,
                    &mut dqkv[head * dh..],
                    qkv_rows,
                );
                gemm(
                    t_len,
                    t_len,
                    dh,
                    T::ONE,
                    &dp,
                    Strides::transposed(t_len),
                    &lc.qkv[head * dh..],
                    qkv_rows,
                    T::ZERO,
                    &mut dqkv[h + head * dh..],
                    qkv_rows,
                );
                self.rope.apply(&mut dqkv, t_len, 3 * h, head * dh, true);
                self.rope.apply(&mut dqkv, t_len, 3 * h, h + head * dh, true);
            }
            let mut d_ln1 = vec![T::ZERO; t_len * h];
            let (dw, db) = pair_mut(grads, p.range(ids.wqkv), p.range(ids.bqkv));
            linear_backward(&lc.ln1_out, &dqkv, t_len, h, 3 * h, p.get(ids.wqkv), dw, Some(db), Some(&mut d_ln1));
            let (dg, dbeta) = pair_mut(grads, p.range(ids.ln1_g), p.range(ids.ln1_b));
            dx = dx_mid;
            layer_norm_backward(&d_ln1, &lc.ln1_xhat, &lc.ln1_rstd, t_len, h, p.get(ids.ln1_g), dg, dbeta, &mut dx);
        }

        // embeddings
        for t in 0..t_len {
            let dxr = &dx[t * h..(t + 1) * h];
            let low = cache.lowest_masked[t];
            for cb in 0..low.unwrap_or(cfg.codebooks) {
                let tok = input.grid.raw_tokens()[cb * t_len + t] as usize;
                let r = p.range(self.ids.tok[cb]);
                let g = &mut grads[r.start + tok * h..r.start + (tok + 1) * h];
                g.iter_mut().zip(dxr).for_each(|(a, b)| *a += *b);
            }
            if low.is_some() {
                let g = &mut grads[p.range(self.ids.mask)];
                g.iter_mut().zip(dxr).for_each(|(a, b)| *a += *b);
            }
            if cache.rhythm_on[t] {
                let rw = p.range(self.ids.rhythm_w);
                for b in 0..cfg.bands {
                    let r = T::from_f64(input.rhythm.get(b, t));
                    let g = &mut grads[rw.start + b * h..rw.start + (b + 1) * h];
                    g.iter_mut().zip(dxr).for_each(|(a, d)| *a += r * *d);
                }
            }
        }
        Ok(())
    }
}

fn pair_mut<T>(buf: &mut [T], a: Range<usize>, b: Range<usize>) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start || b.end <= a.start, "overlapping parameter ranges");
    if a.start < b.start {
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.end - b.start])
    } else {
        let (lo, hi) = buf.split_at_mut(a.start);
        (&mut hi[..a.end - a.start], &mut lo[b])
    }
}
