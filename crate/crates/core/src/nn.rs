//! Flat parameter storage, Adam(W), and differentiable building blocks with
//! hand-written backward passes. Tensors are row-major `f32` slices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{matmul, matmul_nt, matmul_tn, Real};
use crate::util::Fnv64;
use crate::{Error, Result};

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Subject to decoupled weight decay.
    pub decay: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable values of a network in one contiguous buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    data: Vec<T>,
    specs: Vec<ParamSpec>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { data: Vec::new(), specs: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same layout with values converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(), specs: self.specs.clone() }
    }

    /// Appends a zero-initialized `rows × cols` tensor.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let offset = self.data.len();
        self.data.resize(offset + rows * cols, T::ZERO);
        self.specs.push(ParamSpec { name, offset, rows, cols, decay });
        ParamId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn range(&self, id: ParamId) -> Range<usize> {
        self.specs[id.0].range()
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[self.range(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        let r = self.range(id);
        &mut self.data[r]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Replaces every value; the layout must already match.
    pub fn load(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(Error::Shape(alloc::format!(
                "parameter buffer has {} values, expected {}",
                values.len(),
                self.data.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter value".into()));
        }
        self.data.copy_from_slice(values);
        Ok(())
    }

    pub fn fill(&mut self, id: ParamId, value: T) {
        self.get_mut(id).fill(value);
    }

    pub fn fill_normal<R: Rng + ?Sized>(&mut self, id: ParamId, std: f64, rng: &mut R) {
        for v in self.get_mut(id) {
            let z: f64 = rng.sample(StandardNormal);
            *v = T::from_f64(z * std);
        }
    }

    pub fn fill_uniform<R: Rng + ?Sized>(&mut self, id: ParamId, bound: f64, rng: &mut R) {
        for v in self.get_mut(id) {
            *v = T::from_f64(rng.gen_range(-bound..=bound));
        }
    }

    /// Hash of layout and values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        for s in &self.specs {
            h.write(s.name.as_bytes());
            h.write_u64(s.rows as u64);
            h.write_u64(s.cols as u64);
        }
        for v in &self.data {
            h.write(&v.to_f64().to_le_bytes());
        }
        h.finish()
    }
}

/// Adam moments; decay is decoupled (AdamW) and applied only to tensors
/// flagged with [`ParamSpec::decay`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Adam { config, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[f32], lr: f32) {
        assert_eq!(grads.len(), store.len());
        assert_eq!(self.m.len(), store.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - libm::pow(beta1 as f64, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2 as f64, self.t as f64);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = libm::sqrt(bc2) as f32;
        for spec in &store.specs {
            let decay = if spec.decay { 1.0 - lr * weight_decay } else { 1.0 };
            for i in spec.range() {
                let g = grads[i];
                let m = beta1 * self.m[i] + (1.0 - beta1) * g;
                let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let p = &mut store.data[i];
                *p = *p * decay - step_size * m / (libm::sqrtf(v) / bc2_sqrt + eps);
            }
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f32], max_norm: f32) -> f32 {
    let norm = libm::sqrt(grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>()) as f32;
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Linear warmup to `base` over `warmup` steps, constant afterwards.
pub fn warmup_lr(base: f32, step: usize, warmup: usize) -> f32 {
    if warmup == 0 {
        return base;
    }
    base * ((step + 1) as f32 / warmup as f32).min(1.0)
}

/// `y = x · W + b` with `x: rows × din`, `W: din × dout`.
pub fn linear<T: Real>(x: &[T], rows: usize, din: usize, w: &[T], b: Option<&[T]>, dout: usize, y: &mut [T]) {
    matmul(x, w, y, rows, din, dout, false);
    if let Some(b) = b {
        for row in y.chunks_exact_mut(dout) {
            row.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
        }
    }
}

/// Accumulates `dW += xᵀ dy`, `db += Σ_rows dy`, and `dx += dy Wᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    matmul_tn(x, dy, dw, din, rows, dout, true);
    if let Some(db) = db {
        for row in dy.chunks_exact(dout) {
            db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
        }
    }
    if let Some(dx) = dx {
        matmul_nt(dy, w, dx, rows, dout, din, true);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization. Stores the normalized input and reciprocal
/// standard deviation for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm<T: Real>(
    x: &[T],
    rows: usize,
    dim: usize,
    gamma: &[T],
    beta: &[T],
    y: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    for r in 0..rows {
        let xs = &x[r * dim..(r + 1) * dim];
        let mean = xs.iter().map(|v| v.to_f64()).sum::<f64>() / dim as f64;
        let var = xs.iter().map(|v| (v.to_f64() - mean) * (v.to_f64() - mean)).sum::<f64>() / dim as f64;
        let rs = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        rstd[r] = T::from_f64(rs);
        for i in 0..dim {
            let h = T::from_f64((xs[i].to_f64() - mean) * rs);
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gamma[i] + beta[i];
        }
    }
}

/// Accumulates parameter gradients and `dx`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    rows: usize,
    dim: usize,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let n = dim as f64;
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &xhat[r * dim..(r + 1) * dim];
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for i in 0..dim {
            dgamma[i] += dyr[i] * xh[i];
            dbeta[i] += dyr[i];
            let g = (dyr[i] * gamma[i]).to_f64();
            sum_g += g;
            sum_gx += g * xh[i].to_f64();
        }
        let (mg, mgx) = (sum_g / n, sum_gx / n);
        for i in 0..dim {
            let g = (dyr[i] * gamma[i]).to_f64();
            dx[r * dim + i] += T::from_f64(rstd[r].to_f64() * (g - mg - xh[i].to_f64() * mgx));
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: &[T], y: &mut [T]) {
    let (c, a, half) = (T::from_f64(GELU_C), T::from_f64(GELU_A), T::from_f64(0.5));
    for (o, &v) in y.iter_mut().zip(x) {
        *o = half * v * (T::ONE + (c * (v + a * v * v * v)).tanh());
    }
}

/// `dx += gelu'(x) · dy`.
pub fn gelu_backward<T: Real>(x: &[T], dy: &[T], dx: &mut [T]) {
    let (c, a, half, three) = (T::from_f64(GELU_C), T::from_f64(GELU_A), T::from_f64(0.5), T::from_f64(3.0));
    for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        let t = (c * (v + a * v * v * v)).tanh();
        let dt = (T::ONE - t * t) * c * (T::ONE + three * a * v * v);
        *d += g * (half * (T::ONE + t) + half * v * dt);
    }
}

/// In-place numerically stable softmax of each row.
pub fn softmax_rows<T: Real>(x: &mut [T], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(row[0], |m, v| if v > m { v } else { m });
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::ONE / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Rotary position embedding over one head, rotating dimension pairs
/// `(i, i + d/2)`.
#[derive(Clone, Debug)]
pub struct Rope<T: Real = f32> {
    head_dim: usize,
    max_len: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> Rope<T> {
    pub fn new(head_dim: usize, max_len: usize, base: f64) -> Self {
        assert!(head_dim.is_multiple_of(2), "rotary head dimension must be even");
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(max_len * half);
        let mut sin = Vec::with_capacity(max_len * half);
        for pos in 0..max_len {
            for i in 0..half {
                let freq = libm::pow(base, -2.0 * i as f64 / head_dim as f64);
                let angle = pos as f64 * freq;
                cos.push(T::from_f64(libm::cos(angle)));
                sin.push(T::from_f64(libm::sin(angle)));
            }
        }
        Rope { head_dim, max_len, cos, sin }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Rotates the `head_dim` values at `offset` within each of `rows` rows
    /// of width `stride`. `inverse` applies the transpose rotation, which is
    /// also the backward pass.
    pub fn apply(&self, x: &mut [T], rows: usize, stride: usize, offset: usize, inverse: bool) {
        assert!(rows <= self.max_len, "sequence longer than rotary table");
        let half = self.head_dim / 2;
        for pos in 0..rows {
            let base = pos * stride + offset;
            for i in 0..half {
                let c = self.cos[pos * half + i];
                let s = if inverse { -self.sin[pos * half + i] } else { self.sin[pos * half + i] };
                let a = x[base + i];
                let b = x[base + i + half];
                x[base + i] = a * c - b * s;
                x[base + i + half] = a * s + b * c;
            }
        }
    }
}

/// Geometry of a strided 1-D convolution from `len_in` to `len_out` samples
/// with left zero padding `pad`: output `t` reads inputs
/// `t·stride + j − pad` for `j < kernel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl ConvGeom {
    /// Output length `len_in / stride` with `kernel = 2·stride` and
    /// `pad = stride / 2`; `len_in` must be a multiple of `stride`.
    pub fn downsample(channels: usize, stride: usize, len_in: usize) -> Self {
        debug_assert_eq!(len_in % stride, 0);
        ConvGeom { channels, kernel: 2 * stride, stride, pad: stride / 2, len_in, len_out: len_in / stride }
    }

    /// Stride-1 convolution preserving length (odd kernel).
    pub fn same(channels: usize, kernel: usize, len: usize) -> Self {
        ConvGeom { channels, kernel, stride: 1, pad: kernel / 2, len_in: len, len_out: len }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel
    }

    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let i = (t * self.stride + j) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < self.len_in).then_some(i as usize)
    }

    /// Gathers `x: channels × len_in` into `cols: (channels·kernel) × len_out`.
    pub fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        debug_assert_eq!(x.len(), self.channels * self.len_in);
        debug_assert_eq!(cols.len(), self.col_rows() * self.len_out);
        for ch in 0..self.channels {
            let xs = &x[ch * self.len_in..(ch + 1) * self.len_in];
            for j in 0..self.kernel {
                let row = &mut cols[(ch * self.kernel + j) * self.len_out..][..self.len_out];
                for (t, out) in row.iter_mut().enumerate() {
                    *out = self.source(t, j).map_or(T::ZERO, |i| xs[i]);
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters and accumulates into `x`.
    pub fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        for ch in 0..self.channels {
            for j in 0..self.kernel {
                let row = &cols[(ch * self.kernel + j) * self.len_out..][..self.len_out];
                for (t, &v) in row.iter().enumerate() {
                    if let Some(i) = self.source(t, j) {
                        x[ch * self.len_in + i] += v;
                    }
                }
            }
        }
    }
}

/// Convolution `y = W · im2col(x) + b` with `W: c_out × (c_in·kernel)`.
/// Returns the column buffer for the backward pass.
pub fn conv1d<T: Real>(geom: &ConvGeom, x: &[T], w: &[T], b: &[T], c_out: usize, y: &mut [T]) -> Vec<T> {
    let mut cols = vec![T::ZERO; geom.col_rows() * geom.len_out];
    geom.im2col(x, &mut cols);
    matmul(w, &cols, y, c_out, geom.col_rows(), geom.len_out, false);
    add_channel_bias(y, b, geom.len_out);
    cols
}

/// Accumulates `dW`, `db`, and (if given) `dx` for [`conv1d`].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Real>(
    geom: &ConvGeom,
    cols: &[T],
    dy: &[T],
    w: &[T],
    c_out: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let k = geom.col_rows();
    matmul_nt(dy, cols, dw, c_out, geom.len_out, k, true);
    accumulate_channel_bias(dy, db, geom.len_out);
    if let Some(dx) = dx {
        let mut dcols = vec![T::ZERO; k * geom.len_out];
        matmul_tn(w, dy, &mut dcols, k, c_out, geom.len_out, false);
        geom.col2im(&dcols, dx);
    }
}

/// Transposed convolution: `x: c_in × len_out(geom)` to
/// `y: channels(geom) × len_in(geom)`, the adjoint geometry of [`conv1d`].
/// `W: c_in × (channels·kernel)`.
pub fn conv_transpose1d<T: Real>(geom: &ConvGeom, x: &[T], c_in: usize, w: &[T], b: &[T], y: &mut [T]) {
    let k = geom.col_rows();
    let mut cols = vec![T::ZERO; k * geom.len_out];
    matmul_tn(w, x, &mut cols, k, c_in, geom.len_out, false);
    y.fill(T::ZERO);
    geom.col2im(&cols, y);
    add_channel_bias(y, b, geom.len_in);
}

/// Accumulates `dW`, `db`, and (if given) `dx` for [`conv_transpose1d`].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_backward<T: Real>(
    geom: &ConvGeom,
    x: &[T],
    c_in: usize,
    dy: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let k = geom.col_rows();
    let mut dcols = vec![T::ZERO; k * geom.len_out];
    geom.im2col(dy, &mut dcols);
    matmul_nt(x, &dcols, dw, c_in, geom.len_out, k, true);
    accumulate_channel_bias(dy, db, geom.len_in);
    if let Some(dx) = dx {
        matmul(w, &dcols, dx, c_in, k, geom.len_out, true);
    }
}

fn add_channel_bias<T: Real>(y: &mut [T], b: &[T], len: usize) {
    for (row, &bb) in y.chunks_exact_mut(len).zip(b) {
        row.iter_mut().for_each(|v| *v += bb);
    }
}

fn accumulate_channel_bias<T: Real>(dy: &[T], db: &mut [T], len: usize) {
    for (row, d) in dy.chunks_exact(len).zip(db.iter_mut()) {
        *d += row.iter().copied().sum::<T>();
    }
}

/// Leaky ReLU slope for negative inputs.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::ZERO {
            *v *= T::from_f64(LEAKY_SLOPE)
        }
    });
}

/// Multiplies `dy` in place by the leaky-ReLU derivative, given the
/// activation output `y` (the sign is preserved).
pub fn leaky_relu_backward<T: Real>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v < T::ZERO {
            *d *= T::from_f64(LEAKY_SLOPE);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn store_layout_and_lookup() {
        let mut s = ParamStore::new();
        let a = s.add("a", 2, 3, true);
        let b = s.add("b", 1, 4, false);
        assert_eq!(s.len(), 10);
        assert_eq!(s.range(b), 6..10);
        assert_eq!(s.find("b"), Some(b));
        s.fill(a, 1.5);
        assert_eq!(s.get(a), &[1.5; 6]);
        let fp = s.fingerprint();
        s.get_mut(b)[0] = 1.0;
        assert_ne!(fp, s.fingerprint());
        assert!(s.load(&[0.0; 3]).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", 1, 3, false);
        s.get_mut(id).copy_from_slice(&[3.0, -2.0, 0.5]);
        let mut opt = Adam::new(3, AdamConfig::default());
        for _ in 0..2000 {
            let g: Vec<f32> = s.get(id).iter().map(|v| 2.0 * v).collect();
            opt.step(&mut s, &g, 0.01);
        }
        assert!(s.get(id).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn decoupled_decay_only_on_flagged() {
        let mut s = ParamStore::new();
        let a = s.add("w", 1, 1, true);
        let b = s.add("b", 1, 1, false);
        s.fill(a, 1.0);
        s.fill(b, 1.0);
        let mut opt = Adam::new(2, AdamConfig { weight_decay: 0.5, ..AdamConfig::default() });
        opt.step(&mut s, &[0.0, 0.0], 0.1);
        assert!((s.get(a)[0] - 0.95).abs() < 1e-6);
        assert_eq!(s.get(b)[0], 1.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
        assert_eq!(warmup_lr(1.0, 0, 100), 0.01);
        assert_eq!(warmup_lr(1.0, 500, 100), 1.0);
    }

    #[test]
    fn linear_backward_is_adjoint() {
        let (rows, din, dout) = (5, 4, 3);
        let x = randn(rows * din, 1);
        let w = randn(din * dout, 2);
        let b = randn(dout, 3);
        let dy = randn(rows * dout, 4);
        let mut y = vec![0.0; rows * dout];
        linear(&x, rows, din, &w, Some(&b), dout, &mut y);
        // y[0,0] by hand
        let y00: f32 = (0..din).map(|i| x[i] * w[i * dout]).sum::<f32>() + b[0];
        assert!((y[0] - y00).abs() < 1e-5);
        let (mut dw, mut db, mut dx) = (vec![0.0; din * dout], vec![0.0; dout], vec![0.0; rows * din]);
        linear_backward(&x, &dy, rows, din, dout, &w, &mut dw, Some(&mut db), Some(&mut dx));
        // <dy, W·dx'> identities: d/dW <dy, xW> = xᵀdy etc.
        let dx_probe = randn(rows * din, 5);
        let mut y2 = vec![0.0; rows * dout];
        linear(&dx_probe, rows, din, &w, None, dout, &mut y2);
        assert!(rel_close(dot(&dy, &y2), dot(&dx, &dx_probe), 1e-5));
        let w_probe = randn(din * dout, 6);
        let mut y3 = vec![0.0; rows * dout];
        linear(&x, rows, din, &w_probe, None, dout, &mut y3);
        assert!(rel_close(dot(&dy, &y3), dot(&dw, &w_probe), 1e-5));
        let col_sum: f32 = (0..rows).map(|r| dy[r * dout + 1]).sum();
        assert!((db[1] - col_sum).abs() < 1e-5);
    }

    fn ln_loss(x: &[f32], gamma: &[f32], beta: &[f32], probe: &[f32], rows: usize, dim: usize) -> f64 {
        let mut y = vec![0.0; x.len()];
        let mut xh = vec![0.0; x.len()];
        let mut rs = vec![0.0; rows];
        layer_norm(x, rows, dim, gamma, beta, &mut y, &mut xh, &mut rs);
        dot(&y, probe)
    }

    #[test]
    fn layer_norm_matches_finite_differences() {
        let (rows, dim) = (3, 8);
        let x = randn(rows * dim, 7);
        let gamma: Vec<f32> = randn(dim, 8).iter().map(|v| 1.0 + 0.3 * v).collect();
        let beta = randn(dim, 9);
        let probe = randn(rows * dim, 10);
        let mut y = vec![0.0; x.len()];
        let mut xh = vec![0.0; x.len()];
        let mut rs = vec![0.0; rows];
        layer_norm(&x, rows, dim, &gamma, &beta, &mut y, &mut xh, &mut rs);
        let (mut dg, mut db, mut dx) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; rows * dim]);
        layer_norm_backward(&probe, &xh, &rs, rows, dim, &gamma, &mut dg, &mut db, &mut dx);
        let eps = 1e-2;
        for i in [0, 5, 11, 23] {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (ln_loss(&xp, &gamma, &beta, &probe, rows, dim) - ln_loss(&xm, &gamma, &beta, &probe, rows, dim))
                / (2.0 * eps as f64);
            assert!(rel_close(fd, dx[i] as f64, 2e-2), "dx[{i}]: fd {fd} vs {}", dx[i]);
        }
        for i in [0, 3, 7] {
            let mut gp = gamma.clone();
            gp[i] += eps;
            let mut gm = gamma.clone();
            gm[i] -= eps;
            let fd = (ln_loss(&x, &gp, &beta, &probe, rows, dim) - ln_loss(&x, &gm, &beta, &probe, rows, dim))
                / (2.0 * eps as f64);
            assert!(rel_close(fd, dg[i] as f64, 1e-2));
        }
    }

    #[test]
    fn gelu_derivative() {
        let x = [-3.0f32, -1.0, -0.1, 0.0, 0.4, 2.5];
        let mut y = [0.0; 6];
        gelu(&x, &mut y);
        assert_eq!(y[3], 0.0);
        assert!((y[5] - 2.4845).abs() < 1e-3);
        let mut dx = [0.0; 6];
        gelu_backward(&x, &[1.0; 6], &mut dx);
        for i in 0..6 {
            let f = |v: f64| 0.5 * v * (1.0 + libm::tanh(0.7978845608 * (v + 0.044715 * v * v * v)));
            let fd = (f(x[i] as f64 + 1e-5) - f(x[i] as f64 - 1e-5)) / 2e-5;
            assert!((fd - dx[i] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut x = vec![1.0, 2.0, 3.0, 1000.0, 1000.0, 1000.0];
        softmax_rows(&mut x, 3);
        assert!((x[..3].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((x[3] - 1.0 / 3.0).abs() < 1e-6);
        assert!(x[2] > x[1] && x[1] > x[0]);
    }

    #[test]
    fn rope_is_orthogonal_and_relative() {
        let rope = Rope::new(8, 16, 10000.0);
        let x = randn(16 * 8, 11);
        let mut y = x.clone();
        rope.apply(&mut y, 16, 8, 0, false);
        assert_eq!(&y[..8], &x[..8], "position 0 is unrotated");
        for r in 0..16 {
            let n0 = dot(&x[r * 8..r * 8 + 8], &x[r * 8..r * 8 + 8]);
            let n1 = dot(&y[r * 8..r * 8 + 8], &y[r * 8..r * 8 + 8]);
            assert!(rel_close(n0, n1, 1e-5));
        }
        rope.apply(&mut y, 16, 8, 0, true);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-5));
        // <R_p q, R_k k> depends only on p − k
        let q = randn(8, 12);
        let k = randn(8, 13);
        let score = |p: usize, kp: usize| {
            let mut qq = vec![0.0; 16 * 8];
            let mut kk = vec![0.0; 16 * 8];
            qq[p * 8..p * 8 + 8].copy_from_slice(&q);
            kk[kp * 8..kp * 8 + 8].copy_from_slice(&k);
            rope.apply(&mut qq, 16, 8, 0, false);
            rope.apply(&mut kk, 16, 8, 0, false);
            dot(&qq[p * 8..p * 8 + 8], &kk[kp * 8..kp * 8 + 8])
        };
        assert!(rel_close(score(5, 2), score(9, 6), 1e-4));
    }

    #[test]
    fn im2col_col2im_adjoint() {
        for geom in [ConvGeom::downsample(3, 4, 32), ConvGeom::same(2, 5, 17), ConvGeom::downsample(1, 8, 64)] {
            let x = randn(geom.channels * geom.len_in, 14);
            let c = randn(geom.col_rows() * geom.len_out, 15);
            let mut cols = vec![0.0; c.len()];
            geom.im2col(&x, &mut cols);
            let mut back = vec![0.0; x.len()];
            geom.col2im(&c, &mut back);
            assert!(rel_close(dot(&cols, &c), dot(&x, &back), 1e-5));
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let geom = ConvGeom::downsample(2, 4, 16);
        let c_out = 3;
        let x = randn(2 * 16, 16);
        let w = randn(c_out * geom.col_rows(), 17);
        let b = randn(c_out, 18);
        let mut y = vec![0.0; c_out * 4];
        conv1d(&geom, &x, &w, &b, c_out, &mut y);
        for o in 0..c_out {
            for t in 0..4 {
                let mut acc = b[o];
                for ci in 0..2 {
                    for j in 0..8 {
                        let i = (t * 4 + j) as isize - 2;
                        if (0..16).contains(&i) {
                            acc += w[o * 16 + ci * 8 + j] * x[ci * 16 + i as usize];
                        }
                    }
                }
                assert!((acc - y[o * 4 + t]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_gradients_are_adjoint() {
        let geom = ConvGeom::downsample(2, 4, 24);
        let c_out = 3;
        let x = randn(2 * 24, 19);
        let w = randn(c_out * geom.col_rows(), 20);
        let b = vec![0.0; c_out];
        let dy = randn(c_out * geom.len_out, 21);
        let mut y = vec![0.0; c_out * geom.len_out];
        let cols = conv1d(&geom, &x, &w, &b, c_out, &mut y);
        let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; c_out], vec![0.0; x.len()]);
        conv1d_backward(&geom, &cols, &dy, &w, c_out, &mut dw, &mut db, Some(&mut dx));
        // conv is bilinear in (x, w): <dy, conv(x)> = <dx, x> = <dw, w>
        assert!(rel_close(dot(&dy, &y), dot(&dx, &x), 1e-5));
        assert!(rel_close(dot(&dy, &y), dot(&dw, &w), 1e-5));

        // transposed conv maps c_out × len_out back to 2 × len_in
        let xt = randn(c_out * geom.len_out, 22);
        let wt = randn(c_out * geom.col_rows(), 23);
        let dyt = randn(2 * geom.len_in, 24);
        let mut yt = vec![0.0; 2 * geom.len_in];
        conv_transpose1d(&geom, &xt, c_out, &wt, &[0.0; 2], &mut yt);
        let (mut dwt, mut dbt, mut dxt) = (vec![0.0; wt.len()], vec![0.0; 2], vec![0.0; xt.len()]);
        conv_transpose1d_backward(&geom, &xt, c_out, &dyt, &wt, &mut dwt, &mut dbt, Some(&mut dxt));
        assert!(rel_close(dot(&dyt, &yt), dot(&dxt, &xt), 1e-5));
        assert!(rel_close(dot(&dyt, &yt), dot(&dwt, &wt), 1e-5));
        // and it is the adjoint of the forward conv with the same weights
        let mut fwd = vec![0.0; c_out * geom.len_out];
        conv1d(&geom, &dyt, &wt, &[0.0; 3], c_out, &mut fwd);
        assert!(rel_close(dot(&fwd, &xt), dot(&dyt, &yt), 1e-5));
    }

    #[test]
    fn leaky_relu_pair() {
        let mut x = vec![-2.0, 0.5];
        leaky_relu(&mut x);
        assert_eq!(x, vec![-0.2, 0.5]);
        let mut g = vec![1.0, 1.0];
        leaky_relu_backward(&x, &mut g);
        assert_eq!(g, vec![0.1, 1.0]);
    }
}
