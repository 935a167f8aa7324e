//! WAV reading and writing (16-bit PCM and 32-bit float, little-endian).

use std::path::Path;

use gesture_drums_core::dsp::AudioClip;
use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};

/// Sample encoding used when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let ctx = |e: hound::Error| Error::data(format!("{}: {e}", path.display()));
    let mut reader = hound::WavReader::open(path).map_err(ctx)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(ctx)?,
        (SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(ctx)?
        }
        (fmt, bits) => return Err(Error::data(format!("{}: unsupported sample format {fmt:?}/{bits}", path.display()))),
    };
    let channels = usize::from(spec.channels.max(1));
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|f| f.iter().sum::<f32>() / channels as f32).collect()
    };
    AudioClip::new(samples, spec.sample_rate).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Writes a mono WAV file. PCM output saturates at full scale.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let ctx = |e: hound::Error| Error::data(format!("{}: {e}", path.display()));
    let spec = match format {
        WavFormat::Pcm16 => WavSpec { channels: 1, sample_rate: clip.sample_rate(), bits_per_sample: 16, sample_format: SampleFormat::Int },
        WavFormat::Float32 => WavSpec { channels: 1, sample_rate: clip.sample_rate(), bits_per_sample: 32, sample_format: SampleFormat::Float },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(ctx)?;
    for &s in clip.samples() {
        match format {
            WavFormat::Pcm16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).map_err(ctx)?,
            WavFormat::Float32 => writer.write_sample(s).map_err(ctx)?,
        }
    }
    writer.finalize().map_err(ctx)
}

/// Reads a WAV file and checks its sample rate.
pub fn read_wav_at(path: impl AsRef<Path>, sample_rate: u32) -> Result<AudioClip> {
    let clip = read_wav(&path)?;
    if clip.sample_rate() != sample_rate {
        return Err(Error::data(format!(
            "{}: sample rate {} Hz, the pipeline runs at {sample_rate} Hz",
            path.as_ref().display(),
            clip.sample_rate()
        )));
    }
    Ok(clip)
}
