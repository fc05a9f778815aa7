//! Chunked low-latency inference.
//!
//! Each pushed chunk is appended to a rolling buffer and the provider is run
//! on the whole buffer. The emitted chunk is the buffer's second-to-last
//! chunk-sized region, so output lags input by exactly one chunk. Its head is
//! crossfaded with the same audio as seen by the previous evaluation, where
//! it was the last region.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::enhance::{enhance_segment, MaskProvider};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub buffer_len: usize,
    pub chunk_size: usize,
    /// 0 disables crossfading.
    pub crossfade_len: usize,
    pub sample_rate: u32,
    pub stft: StftConfig,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { buffer_len: 16384, chunk_size: 640, crossfade_len: 640, sample_rate: 16000, stft: StftConfig::default() }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.chunk_size == 0 || 2 * self.chunk_size > self.buffer_len {
            return Err(Error::Config(format!(
                "chunk size {} must be positive and at most half the buffer ({})",
                self.chunk_size, self.buffer_len
            )));
        }
        if self.crossfade_len > self.chunk_size {
            return Err(Error::Config("crossfade longer than a chunk".into()));
        }
        let b = self.buffer_len;
        if b < self.stft.fft_size || (b - self.stft.fft_size) % self.stft.hop_size != 0 {
            return Err(Error::Config(format!("buffer of {b} samples is not a whole number of STFT frames")));
        }
        Ok(())
    }
}

/// Linear crossfade: `out[i] = (1 - i/len) prev[i] + (i/len) new[i]`.
pub fn crossfade_merge(prev: &[f64], new: &[f64], len: usize) -> Result<Vec<f64>> {
    if prev.len() != new.len() || prev.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "crossfade of {len} samples given {} and {}",
            prev.len(),
            new.len()
        )));
    }
    Ok((0..len)
        .map(|i| {
            let a = i as f64 / len as f64;
            (1.0 - a) * prev[i] + a * new[i]
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct StreamState {
    cfg: StreamConfig,
    buffer: VecDeque<f64>,
    /// Last region of the previous evaluation: the pending chunk without look-ahead.
    pending: Option<Vec<f64>>,
    /// Valid samples in the pending chunk (a short final chunk is zero-padded).
    pending_len: usize,
    pushed: u64,
    frames_emitted: u64,
    samples_emitted: u64,
    final_seen: bool,
    flushed: bool,
    compute_s: f64,
}

impl StreamState {
    pub fn new(cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            buffer: std::iter::repeat_n(0.0, cfg.buffer_len).collect(),
            pending: None,
            pending_len: 0,
            pushed: 0,
            frames_emitted: 0,
            samples_emitted: 0,
            final_seen: false,
            flushed: false,
            compute_s: 0.0,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    /// Algorithmic delay in samples.
    pub fn latency_samples(&self) -> usize {
        self.cfg.chunk_size
    }

    pub fn frames_emitted(&self) -> u64 {
        self.frames_emitted
    }

    pub fn samples_emitted(&self) -> u64 {
        self.samples_emitted
    }

    /// Current buffer contents, oldest first.
    pub fn buffer(&self) -> Vec<f64> {
        self.buffer.iter().copied().collect()
    }

    /// Wall-clock compute time per second of emitted audio.
    pub fn real_time_factor(&self) -> f64 {
        if self.samples_emitted == 0 {
            return 0.0;
        }
        self.compute_s / (self.samples_emitted as f64 / self.cfg.sample_rate as f64)
    }

    /// Appends a chunk and returns the previous chunk, enhanced. A chunk
    /// shorter than `chunk_size` is treated as the last one.
    pub fn push_chunk(&mut self, chunk: &[f64], provider: &dyn MaskProvider) -> Result<Option<Vec<f64>>> {
        if self.flushed {
            return Err(Error::AlreadyFlushed);
        }
        let c = self.cfg.chunk_size;
        if self.final_seen {
            return Err(Error::InvalidChunk("push after a short final chunk".into()));
        }
        if chunk.is_empty() || chunk.len() > c {
            return Err(Error::InvalidChunk(format!("expected {c} samples, got {}", chunk.len())));
        }
        if chunk.len() < c {
            self.final_seen = true;
        }
        let mut padded = chunk.to_vec();
        padded.resize(c, 0.0);
        self.step(&padded, chunk.len(), provider)
    }

    /// Emits the pending chunk using zeros as its look-ahead.
    pub fn flush(&mut self, provider: &dyn MaskProvider) -> Result<Vec<f64>> {
        if self.flushed {
            return Err(Error::AlreadyFlushed);
        }
        self.flushed = true;
        if self.pending.is_none() {
            return Ok(Vec::new());
        }
        let zeros = vec![0.0; self.cfg.chunk_size];
        Ok(self.step(&zeros, 0, provider)?.unwrap_or_default())
    }

    fn step(&mut self, chunk: &[f64], valid: usize, provider: &dyn MaskProvider) -> Result<Option<Vec<f64>>> {
        let (b, c) = (self.cfg.buffer_len, self.cfg.chunk_size);
        self.buffer.drain(..c);
        self.buffer.extend(chunk.iter().copied());
        self.pushed += c as u64;
        let offset = self.pushed as i64 - b as i64;
        let start = Instant::now();
        let buf: Vec<f64> = self.buffer.iter().copied().collect();
        let out = enhance_segment(&buf, offset, provider, &self.cfg.stft, self.cfg.sample_rate)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidArgument("provider returned no masks".into()))?;
        self.compute_s += start.elapsed().as_secs_f64();

        let region = &out[b - 2 * c..b - c];
        let emitted = self.pending.take().map(|prev| {
            let xf = self.cfg.crossfade_len;
            let mut e = region.to_vec();
            if xf > 0 {
                let head = crossfade_merge(&prev[..xf], &region[..xf], xf).expect("equal lengths");
                e[..xf].copy_from_slice(&head);
            }
            e.truncate(self.pending_len);
            e
        });
        if valid > 0 {
            self.pending = Some(out[b - c..].to_vec());
            self.pending_len = valid;
        }
        if let Some(e) = &emitted {
            self.frames_emitted += 1;
            self.samples_emitted += e.len() as u64;
        }
        Ok(emitted)
    }
}

/// Streams a whole signal chunk by chunk and returns the concatenated output,
/// as long as the input.
pub fn stream_signal(x: &[f64], cfg: StreamConfig, provider: &dyn MaskProvider) -> Result<(Vec<f64>, StreamState)> {
    let mut st = StreamState::new(cfg)?;
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks(cfg.chunk_size) {
        if let Some(e) = st.push_chunk(chunk, provider)? {
            out.extend(e);
        }
    }
    out.extend(st.flush(provider)?);
    Ok((out, st))
}
