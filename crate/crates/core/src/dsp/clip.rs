use alloc::vec::Vec;

use crate::{Error, Result};

/// Mono audio buffer with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip; rejects empty buffers and non-finite samples.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyClip);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "non-finite sample at index {i}"
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    /// Silent clip of `len` samples.
    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(alloc::vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false for a constructed clip; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Copy multiplied by `gain`.
    pub fn scaled(&self, gain: f32) -> AudioClip {
        AudioClip {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sub-clip `[start, start + len)`.
    pub fn excerpt(&self, start: usize, len: usize) -> Result<AudioClip> {
        if len == 0 {
            return Err(Error::EmptyClip);
        }
        if start + len > self.samples.len() {
            return Err(Error::TooShort {
                len: self.samples.len(),
                min: start + len,
            });
        }
        Ok(AudioClip {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn rms(&self) -> f64 {
        let s: f64 = self.samples.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
        libm::sqrt(s / self.samples.len() as f64)
    }
}
