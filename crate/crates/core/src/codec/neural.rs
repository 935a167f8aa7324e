use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{l1_loss_and_grad, LogMelLoss};
use super::rvq::{Quantized, ResidualVq};
use super::{Codec, TokenGrid};
use crate::dsp::AudioClip;
use crate::linalg::Real;
use crate::nn::{
    clip_grad_norm, conv1d, conv1d_backward, conv_transpose1d, conv_transpose1d_backward, leaky_relu,
    leaky_relu_backward, Adam, AdamConfig, ConvGeom, ParamId, ParamStore,
};
use crate::{Error, Fnv64, Result, SAMPLE_RATE};

/// One resolution of the multi-scale spectral loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SpectralScale {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
}

/// Architecture and training recipe of the residual-VQ codec.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CodecConfig {
    pub codebooks: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub hop: usize,
    /// Encoder strides, first block first; their product is `hop`.
    pub strides: Vec<usize>,
    /// Encoder block widths; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub ema_decay: f64,
    pub commitment: f32,
    pub learning_rate: f32,
    pub l1_weight: f32,
    pub spectral_weight: f32,
    pub spectral_scales: Vec<SpectralScale>,
    /// Energy floor inside the log-mel loss.
    pub spectral_floor: f64,
    /// EMA usage count below which a code is restarted.
    pub dead_code_threshold: f64,
    pub grad_clip: f32,
    pub sample_rate: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            codebooks: 9,
            codebook_size: 256,
            latent_dim: 64,
            hop: 512,
            strides: vec![8, 4, 4, 4],
            channels: vec![16, 32, 64, 128],
            ema_decay: 0.99,
            commitment: 0.25,
            learning_rate: 3e-4,
            l1_weight: 1.0,
            spectral_weight: 0.01,
            spectral_scales: vec![
                SpectralScale { n_fft: 512, hop: 128, n_mels: 32 },
                SpectralScale { n_fft: 2048, hop: 512, n_mels: 80 },
            ],
            spectral_floor: 1e-1,
            dead_code_threshold: 0.05,
            grad_clip: 1.0,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.codebooks < 1 {
            return bad("codec needs at least one codebook");
        }
        if self.codebook_size < 2 {
            return bad("codebook size must be at least 2");
        }
        if !self.hop.is_power_of_two() {
            return bad("codec hop must be a power of two");
        }
        if self.latent_dim == 0 || self.channels.contains(&0) {
            return bad("codec widths must be positive");
        }
        if self.strides.is_empty() || self.strides.len() != self.channels.len() {
            return bad("codec needs one width per stride");
        }
        if self.strides.iter().any(|&s| s < 2 || s % 2 != 0) {
            return bad("codec strides must be even");
        }
        if self.strides.iter().product::<usize>() != self.hop {
            return bad("product of codec strides must equal the hop");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema decay must lie in [0, 1)");
        }
        Ok(())
    }

    fn hash_into(&self, h: &mut Fnv64) {
        for v in [self.codebooks, self.codebook_size, self.latent_dim, self.hop] {
            h.write_u64(v as u64);
        }
        for &s in self.strides.iter().chain(&self.channels) {
            h.write_u64(s as u64);
        }
        h.write_u64(u64::from(self.sample_rate));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Down(usize),
    Up(usize),
    Point,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kind: Kind,
    c_in: usize,
    c_out: usize,
    w: ParamId,
    b: ParamId,
    act: bool,
}

struct Trace<T> {
    len_in: usize,
    saved: Vec<T>,
    out: Vec<T>,
}

impl ConvLayer {
    fn geom(&self, len_in: usize) -> (ConvGeom, usize) {
        match self.kind {
            Kind::Down(s) => {
                let g = ConvGeom::downsample(self.c_in, s, len_in);
                (g, g.len_out)
            }
            Kind::Point => (ConvGeom::same(self.c_in, 1, len_in), len_in),
            Kind::Up(s) => (ConvGeom::downsample(self.c_out, s, len_in * s), len_in * s),
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            Kind::Down(s) => self.c_in * 2 * s,
            Kind::Point => self.c_in,
            Kind::Up(_) => self.c_in * 2,
        }
    }

    fn forward<T: Real>(&self, p: &ParamStore<T>, x: &[T], len: usize) -> (Vec<T>, usize, Vec<T>) {
        let (g, len_out) = self.geom(len);
        let mut y = vec![T::ZERO; self.c_out * len_out];
        let saved = match self.kind {
            Kind::Up(_) => {
                conv_transpose1d(&g, x, self.c_in, p.get(self.w), p.get(self.b), &mut y);
                x.to_vec()
            }
            _ => conv1d(&g, x, p.get(self.w), p.get(self.b), self.c_out, &mut y),
        };
        if self.act {
            leaky_relu(&mut y);
        }
        (y, len_out, saved)
    }

    /// Consumes `dy` (gradient at the activation output) and returns the
    /// input gradient when `want_dx`.
    fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        grads: &mut [T],
        trace: &Trace<T>,
        mut dy: Vec<T>,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        if self.act {
            leaky_relu_backward(&trace.out, &mut dy);
        }
        let (g, _) = self.geom(trace.len_in);
        let (rw, rb) = (p.range(self.w), p.range(self.b));
        debug_assert!(rw.end <= rb.start);
        let (lo, hi) = grads.split_at_mut(rb.start);
        let (dw, db) = (&mut lo[rw], &mut hi[..rb.len()]);
        let mut dx = want_dx.then(|| vec![T::ZERO; self.c_in * trace.len_in]);
        match self.kind {
            Kind::Up(_) => conv_transpose1d_backward(
                &g,
                &trace.saved,
                self.c_in,
                &dy,
                p.get(self.w),
                dw,
                db,
                dx.as_deref_mut(),
            ),
            _ => conv1d_backward(&g, &trace.saved, &dy, p.get(self.w), self.c_out, dw, db, dx.as_deref_mut()),
        }
        dx
    }
}

fn run<T: Real>(
    layers: &[ConvLayer],
    p: &ParamStore<T>,
    mut x: Vec<T>,
    mut len: usize,
    mut traces: Option<&mut Vec<Trace<T>>>,
) -> (Vec<T>, usize) {
    for layer in layers {
        let (y, len_out, saved) = layer.forward(p, &x, len);
        if let Some(tr) = traces.as_deref_mut() {
            tr.push(Trace { len_in: len, saved, out: y.clone() });
        }
        x = y;
        len = len_out;
    }
    (x, len)
}

fn run_backward<T: Real>(
    layers: &[ConvLayer],
    p: &ParamStore<T>,
    grads: &mut [T],
    traces: &[Trace<T>],
    dy: Vec<T>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let mut d = dy;
    for (i, (layer, trace)) in layers.iter().zip(traces).enumerate().rev() {
        d = layer.backward(p, grads, trace, d, want_dx || i > 0)?;
    }
    Some(d)
}

/// `rows × cols` to `cols × rows`.
fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Convolutional encoder, residual VQ and transposed-convolution decoder.
#[derive(Clone, Debug)]
pub struct NeuralCodec {
    config: CodecConfig,
    params: ParamStore,
    encoder: Vec<ConvLayer>,
    decoder: Vec<ConvLayer>,
    rvq: ResidualVq,
}

impl NeuralCodec {
    fn layout(config: &CodecConfig) -> (ParamStore, Vec<ConvLayer>, Vec<ConvLayer>) {
        let mut p = ParamStore::new();
        let layer = |p: &mut ParamStore, name: &str, kind, c_in, c_out, act| {
            let k = match kind {
                Kind::Down(s) | Kind::Up(s) => 2 * s,
                Kind::Point => 1,
            };
            let (rows, cols) = match kind {
                Kind::Up(_) => (c_in, c_out * k),
                _ => (c_out, c_in * k),
            };
            let w = p.add(alloc::format!("{name}.w"), rows, cols, false);
            let b = p.add(alloc::format!("{name}.b"), 1, c_out, false);
            ConvLayer { kind, c_in, c_out, w, b, act }
        };
        let n = config.strides.len();
        let width = |i: usize| if i == 0 { 1 } else { config.channels[i - 1] };
        let mut enc = Vec::new();
        for i in 0..n {
            enc.push(layer(&mut p, &alloc::format!("enc.{i}"), Kind::Down(config.strides[i]), width(i), config.channels[i], true));
        }
        enc.push(layer(&mut p, "enc.out", Kind::Point, config.channels[n - 1], config.latent_dim, false));
        let mut dec = vec![layer(&mut p, "dec.in", Kind::Point, config.latent_dim, config.channels[n - 1], true)];
        for i in (0..n).rev() {
            dec.push(layer(&mut p, &alloc::format!("dec.{i}"), Kind::Up(config.strides[i]), config.channels[i], width(i), i > 0));
        }
        (p, enc, dec)
    }

    /// Randomly initialized, untrained codec.
    pub fn new<R: Rng + ?Sized>(config: CodecConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (mut params, encoder, decoder) = Self::layout(&config);
        for layer in encoder.iter().chain(&decoder) {
            params.fill_normal(layer.w, 1.0 / libm::sqrt(layer.fan_in() as f64), rng);
        }
        let rvq = ResidualVq::new(config.codebooks, config.codebook_size, config.latent_dim);
        Ok(NeuralCodec { config, params, encoder, decoder, rvq })
    }

    /// Restores a trained codec from its network weights and codewords.
    pub fn from_parts(config: CodecConfig, weights: &[f32], codewords: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let (mut params, encoder, decoder) = Self::layout(&config);
        params.load(weights)?;
        let rvq = ResidualVq::from_embeddings(config.codebooks, config.codebook_size, config.latent_dim, codewords)?;
        Ok(NeuralCodec { config, params, encoder, decoder, rvq })
    }

    /// Names and shapes of the network weights, in buffer order.
    pub fn param_layout(config: &CodecConfig) -> Result<ParamStore> {
        config.validate()?;
        Ok(Self::layout(config).0)
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn quantizer(&self) -> &ResidualVq {
        &self.rvq
    }

    pub fn is_trained(&self) -> bool {
        self.rvq.is_initialized()
    }

    fn padded(&self, samples: &[f32]) -> (Vec<f32>, usize) {
        let frames = samples.len().div_ceil(self.config.hop);
        let mut x = samples.to_vec();
        x.resize(frames * self.config.hop, 0.0);
        (x, frames)
    }

    /// Encoder output, `frames × latent_dim`.
    pub fn latent(&self, samples: &[f32]) -> (usize, Vec<f32>) {
        let (x, frames) = self.padded(samples);
        let (z, len) = run(&self.encoder, &self.params, x, frames * self.config.hop, None);
        debug_assert_eq!(len, frames);
        (frames, transpose(&z, self.config.latent_dim, frames))
    }

    /// Decoder output for a latent sequence `frames × latent_dim`.
    pub fn decode_latent(&self, q: &[f32], frames: usize) -> Vec<f32> {
        let x = transpose(q, frames, self.config.latent_dim);
        run(&self.decoder, &self.params, x, frames, None).0
    }

    /// Full quantization record of a clip, for inspection and tests.
    pub fn quantize(&self, clip: &AudioClip) -> Result<Quantized> {
        self.check_input(clip)?;
        let (frames, z) = self.latent(clip.samples());
        Ok(self.rvq.quantize(&z, frames))
    }

    fn check_input(&self, clip: &AudioClip) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::UntrainedCodec);
        }
        if clip.len() < self.config.hop {
            return Err(Error::TooShort { len: clip.len(), min: self.config.hop });
        }
        Ok(())
    }
}

impl Codec for NeuralCodec {
    fn codebooks(&self) -> usize {
        self.config.codebooks
    }

    fn vocab(&self) -> usize {
        self.config.codebook_size
    }

    fn hop(&self) -> usize {
        self.config.hop
    }

    fn encode(&self, clip: &AudioClip) -> Result<TokenGrid> {
        let q = self.quantize(clip)?;
        TokenGrid::from_tokens(self.config.codebooks, q.frames, self.config.codebook_size, self.config.hop, q.tokens)
    }

    fn decode(&self, grid: &TokenGrid) -> Result<AudioClip> {
        if !self.is_trained() {
            return Err(Error::UntrainedCodec);
        }
        if grid.codebooks() != self.config.codebooks || grid.vocab() != self.config.codebook_size {
            return Err(Error::Shape(alloc::format!(
                "grid is {}×K{}, codec is {}×K{}",
                grid.codebooks(),
                grid.vocab(),
                self.config.codebooks,
                self.config.codebook_size
            )));
        }
        let frames = grid.frames();
        let mut tokens = Vec::with_capacity(grid.codebooks() * frames);
        for c in 0..grid.codebooks() {
            for t in 0..frames {
                tokens.push(grid.token(c, t)?);
            }
        }
        let q = self.rvq.lookup(&tokens, frames);
        AudioClip::new(self.decode_latent(&q, frames), self.config.sample_rate)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        self.config.hash_into(&mut h);
        h.write_u64(self.params.fingerprint());
        h.write_f32s(self.rvq.embeddings());
        h.finish()
    }
}

/// Loss terms of one optimizer step (batch means).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecStepStats {
    pub step: usize,
    pub loss: f64,
    pub l1: f64,
    pub spectral: f64,
    pub commitment: f64,
    pub grad_norm: f32,
    pub restarts: usize,
}

/// Mutable training state around a [`NeuralCodec`].
#[derive(Clone, Debug)]
pub struct CodecTrainer {
    codec: NeuralCodec,
    adam: Adam,
    rng: ChaCha8Rng,
    spectral: Vec<LogMelLoss>,
    step: usize,
}

impl CodecTrainer {
    pub fn new(codec: NeuralCodec, seed: u64) -> Self {
        let cfg = &codec.config;
        let spectral = cfg
            .spectral_scales
            .iter()
            .map(|s| LogMelLoss::new(s.n_fft, s.hop, s.n_mels, cfg.sample_rate, cfg.spectral_floor))
            .collect();
        CodecTrainer {
            adam: Adam::new(codec.params.len(), AdamConfig::default()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            spectral,
            step: 0,
            codec,
        }
    }

    pub fn codec(&self) -> &NeuralCodec {
        &self.codec
    }

    pub fn into_codec(self) -> NeuralCodec {
        self.codec
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One optimizer step on a batch of excerpts. A non-finite loss leaves
    /// every piece of state untouched and reports [`Error::NonFiniteLoss`].
    pub fn step(&mut self, batch: &[&[f32]]) -> Result<CodecStepStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty codec batch".into()));
        }
        let cfg = self.codec.config.clone();
        let (d, hop) = (cfg.latent_dim, cfg.hop);
        let inv_b = 1.0 / batch.len() as f64;

        let mut encoded = Vec::with_capacity(batch.len());
        for x in batch {
            let (x, frames) = self.codec.padded(x);
            let mut traces = Vec::new();
            let (z, _) = run(&self.codec.encoder, &self.codec.params, x.clone(), frames * hop, Some(&mut traces));
            let zt = transpose(&z, d, frames);
            encoded.push((x, frames, z, zt, traces));
        }

        let mut rvq_init = None;
        if !self.codec.rvq.is_initialized() {
            let all: Vec<f32> = encoded.iter().flat_map(|e| e.3.iter().copied()).collect();
            let frames = all.len() / d;
            let mut rvq = self.codec.rvq.clone();
            rvq.initialize(&all, frames, &mut self.rng);
            rvq_init = Some(rvq);
        }
        let rvq = rvq_init.as_ref().unwrap_or(&self.codec.rvq);

        let mut grads = vec![0.0f32; self.codec.params.len()];
        let (mut l1, mut spec, mut commit) = (0.0, 0.0, 0.0);
        let mut quantized = Vec::with_capacity(batch.len());
        for (x, frames, z, zt, enc_traces) in encoded {
            let q = rvq.quantize(&zt, frames);
            let qd = transpose(&q.quantized, frames, d);
            let mut traces = Vec::new();
            let (y, _) = run(&self.codec.decoder, &self.codec.params, qd.clone(), frames, Some(&mut traces));
            let mut dy = vec![0.0f32; y.len()];
            l1 += l1_loss_and_grad(&y, &x, f64::from(cfg.l1_weight) * inv_b, &mut dy) * inv_b;
            for s in &self.spectral {
                spec += s.loss_and_grad(&y, &x, f64::from(cfg.spectral_weight) * inv_b, &mut dy) * inv_b;
            }
            let mut dz = run_backward(&self.codec.decoder, &self.codec.params, &mut grads, &traces, dy, true)
                .expect("input gradient requested");
            let n = (d * frames) as f64;
            let gscale = (2.0 * f64::from(cfg.commitment) * inv_b / n) as f32;
            let mut sq = 0.0;
            for i in 0..dz.len() {
                let e = z[i] - qd[i];
                sq += f64::from(e) * f64::from(e);
                dz[i] += gscale * e;
            }
            commit += sq / n * inv_b;
            run_backward(&self.codec.encoder, &self.codec.params, &mut grads, &enc_traces, dz, false);
            quantized.push(q);
        }

        let loss = f64::from(cfg.l1_weight) * l1 + f64::from(cfg.spectral_weight) * spec + f64::from(cfg.commitment) * commit;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        if let Some(r) = rvq_init {
            self.codec.rvq = r;
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        self.adam.step(&mut self.codec.params, &grads, cfg.learning_rate);
        let merged = Quantized::concat(&quantized, cfg.codebooks, d);
        let restarts = self.codec.rvq.ema_update(&merged, cfg.ema_decay, cfg.dead_code_threshold, &mut self.rng);
        let stats = CodecStepStats { step: self.step, loss, l1, spectral: spec, commitment: commit, grad_norm, restarts };
        self.step += 1;
        Ok(stats)
    }

    /// Draws `batch` random excerpts of `excerpt` samples (rounded up to
    /// whole frames) from `corpus`; short clips are zero-padded.
    pub fn sample_batch(&mut self, corpus: &[AudioClip], batch: usize, excerpt: usize) -> Vec<Vec<f32>> {
        let hop = self.codec.config.hop;
        let len = excerpt.div_ceil(hop).max(1) * hop;
        (0..batch)
            .map(|_| {
                let clip = &corpus[self.rng.gen_range(0..corpus.len())];
                let s = clip.samples();
                let start = if s.len() > len { self.rng.gen_range(0..=s.len() - len) } else { 0 };
                let mut x = s[start..(start + len).min(s.len())].to_vec();
                x.resize(len, 0.0);
                x
            })
            .collect()
    }
}

/// Step count, batch shape and seed of a codec training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CodecTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub excerpt: usize,
    pub seed: u64,
}

impl Default for CodecTrainOptions {
    fn default() -> Self {
        CodecTrainOptions { steps: 2000, batch: 8, excerpt: 16_384, seed: 0 }
    }
}

/// Trains a fresh codec on `corpus`, reporting each step to `on_step`.
/// Stops with [`Error::NonFiniteLoss`] on divergence; use [`CodecTrainer`]
/// directly to keep the last good state in that case.
pub fn train_codec(
    corpus: &[AudioClip],
    config: CodecConfig,
    opts: CodecTrainOptions,
    mut on_step: impl FnMut(&CodecStepStats),
) -> Result<NeuralCodec> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty codec training corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let codec = NeuralCodec::new(config, &mut rng)?;
    let mut trainer = CodecTrainer::new(codec, rng.gen());
    for _ in 0..opts.steps {
        let batch = trainer.sample_batch(corpus, opts.batch, opts.excerpt);
        let refs: Vec<&[f32]> = batch.iter().map(Vec::as_slice).collect();
        let stats = trainer.step(&refs)?;
        on_step(&stats);
    }
    if !trainer.codec.is_trained() {
        let batch = trainer.sample_batch(corpus, opts.batch.max(1), opts.excerpt);
        let all: Vec<f32> = batch.iter().flat_map(|x| trainer.codec.latent(x).1).collect();
        let frames = all.len() / trainer.codec.config.latent_dim;
        let mut rvq = trainer.codec.rvq.clone();
        rvq.initialize(&all, frames, &mut trainer.rng);
        trainer.codec.rvq = rvq;
    }
    Ok(trainer.into_codec())
}
