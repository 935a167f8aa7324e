//! Numerical core of the gesture-to-drums pipeline.
//!
//! Everything here is pure computation over in-memory buffers: spectral
//! analysis and augmentation, the dualized rhythm representation, a small
//! residual-VQ audio codec, the masked token transformer with hand-written
//! backpropagation, masking/decoding schedules, training, iterative
//! generation and the objective metrics. File formats, configuration files
//! and the command line live in the `gesture-drums` companion crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All transcendental functions go through `libm` so that feature
//! extraction is bit-reproducible across platforms.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod codec;
pub mod dsp;
mod error;
pub mod eval;
pub mod fft;
pub mod infer;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod rhythm;
pub mod sched;
pub mod synth;
pub mod train;
mod util;

pub use error::{Error, Result};
pub use util::{fingerprint_f32, Fnv64};

/// Sample rate every pipeline stage assumes.
pub const SAMPLE_RATE: u32 = 44_100;
