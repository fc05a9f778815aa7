//! Mono WAV ingest and export.
//!
//! Reads PCM (8/16/24/32-bit) and IEEE float32. Multichannel input is mixed
//! down by averaging and anything not at 16 kHz is resampled on load.
//! Writes are float32, so a write/read round trip is bit exact for any value
//! representable as `f32`.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a file and returns it as a mono buffer at the canonical rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let raw = read_wav_native(path)?;
    to_canonical_rate(raw)
}

/// Reads a file as mono without changing its sample rate.
pub fn read_wav_native(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

fn to_canonical_rate(x: AudioBuffer) -> Result<AudioBuffer> {
    if x.sample_rate == SAMPLE_RATE {
        return Ok(x);
    }
    if x.sample_rate > 48_000 {
        return Err(Error::InvalidArgument(format!("sample rate {} above 48 kHz is not supported", x.sample_rate)));
    }
    let ratio = SAMPLE_RATE as f64 / x.sample_rate as f64;
    // The resampler accepts ratios in [0.5, 2]; larger changes go in steps.
    let mut cur = x;
    let mut remaining = ratio;
    while remaining < 0.5 || remaining > 2.0 {
        let step = if remaining < 0.5 { 0.5 } else { 2.0 };
        cur = resample(&cur, step)?;
        remaining /= step;
    }
    let mut out = resample(&cur, remaining)?;
    out.sample_rate = SAMPLE_RATE;
    Ok(out)
}

pub fn write_wav(path: impl AsRef<Path>, x: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for &s in &x.samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, x: &AudioBuffer) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: x.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for &s in &x.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Rounds every sample through `f32`, matching what [`write_wav`] stores.
pub fn quantize_f32(x: &AudioBuffer) -> AudioBuffer {
    AudioBuffer { samples: x.samples.iter().map(|&v| v as f32 as f64).collect(), sample_rate: x.sample_rate }
}
