//! Mask providers and offline enhancement.

use std::path::Path;

use num_complex::Complex64;

use crate::dsp::{istft_exact, stft, AudioBuffer, ComplexMask, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::posnet::checkpoint::Checkpoint;
use crate::posnet::{ModelParams, Mode, NetConfig, PosNet};

/// Anything that turns a spectrogram into complex masks.
///
/// `offset` is the index, in the caller's source signal, of the first sample
/// the spectrogram was computed from. It may be negative when the caller padded
/// the signal. Models ignore it; oracles use it to align their references.
pub trait MaskProvider {
    fn n_masks(&self) -> usize;
    fn masks(&self, spec: &Spectrogram, offset: i64) -> Result<Vec<ComplexMask>>;
}

/// Mask 0 passes everything, the rest pass nothing.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMasks {
    pub n: usize,
}

impl Default for IdentityMasks {
    fn default() -> Self {
        Self { n: 2 }
    }
}

impl MaskProvider for IdentityMasks {
    fn n_masks(&self) -> usize {
        self.n
    }

    fn masks(&self, spec: &Spectrogram, _offset: i64) -> Result<Vec<ComplexMask>> {
        Ok((0..self.n)
            .map(|k| {
                let v = if k == 0 { 1.0 } else { 0.0 };
                ComplexMask::constant(spec.frames, spec.bins, Complex64::new(v, 0.0))
            })
            .collect())
    }
}

/// Ratio masks computed from known targets aligned with the source signal.
#[derive(Debug, Clone)]
pub struct OracleMasks {
    pub targets: Vec<AudioBuffer>,
}

impl OracleMasks {
    pub fn new(targets: Vec<AudioBuffer>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("oracle needs at least one target".into()));
        }
        if targets.iter().any(|t| t.len() != targets[0].len()) {
            return Err(Error::ShapeMismatch("oracle targets differ in length".into()));
        }
        Ok(Self { targets })
    }
}

/// Samples `[offset, offset + len)` of `x`, zero outside.
pub fn window_of(x: &[f64], offset: i64, len: usize) -> Vec<f64> {
    (0..len as i64)
        .map(|i| {
            let j = offset + i;
            if j >= 0 && (j as usize) < x.len() {
                x[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

impl MaskProvider for OracleMasks {
    fn n_masks(&self) -> usize {
        self.targets.len()
    }

    fn masks(&self, spec: &Spectrogram, offset: i64) -> Result<Vec<ComplexMask>> {
        let len = spec.config.samples_for(spec.frames);
        self.targets
            .iter()
            .map(|t| {
                let seg = AudioBuffer::new(window_of(&t.samples, offset, len), t.sample_rate)?;
                ComplexMask::ratio(&stft(&seg, &spec.config)?, spec)
            })
            .collect()
    }
}

/// A trained network in eval mode.
#[derive(Debug, Clone)]
pub struct NetMasks {
    pub net: PosNet,
    pub params: ModelParams,
}

impl NetMasks {
    pub fn new(cfg: &NetConfig, params: ModelParams) -> Result<Self> {
        let net = PosNet::new(cfg)?;
        net.check_params(&params)?;
        Ok(Self { net, params })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Self::new(&ck.config, ck.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.net.config().stft
    }
}

impl MaskProvider for NetMasks {
    fn n_masks(&self) -> usize {
        self.net.config().n_output_masks
    }

    fn masks(&self, spec: &Spectrogram, _offset: i64) -> Result<Vec<ComplexMask>> {
        let (mut masks, _) = self.net.forward_spectrograms(&self.params, &[spec], Mode::Eval)?;
        Ok(masks.swap_remove(0))
    }
}

/// Masks and inverts one segment whose length is a whole number of frames.
/// Returns one waveform per mask, each as long as the segment.
pub fn enhance_segment(
    segment: &[f64],
    offset: i64,
    provider: &dyn MaskProvider,
    cfg: &StftConfig,
    sample_rate: u32,
) -> Result<Vec<Vec<f64>>> {
    let x = AudioBuffer::new(segment.to_vec(), sample_rate)?;
    let spec = stft(&x, cfg)?;
    if cfg.samples_for(spec.frames) != segment.len() {
        return Err(Error::InvalidArgument(format!(
            "segment of {} samples is not a whole number of frames",
            segment.len()
        )));
    }
    provider
        .masks(&spec, offset)?
        .iter()
        .map(|m| Ok(istft_exact(&spec.apply_mask(m)?)?.samples))
        .collect()
}

/// Zero padding applied by [`enhance`]: `(front, total_len)`.
pub fn offline_layout(len: usize, cfg: &StftConfig) -> (usize, usize) {
    let front = cfg.fft_size;
    let min_total = len + 2 * cfg.fft_size;
    let frames = (min_total - cfg.fft_size).div_ceil(cfg.hop_size) + 1;
    (front, cfg.samples_for(frames))
}

/// Offline enhancement of a whole signal. The signal is padded with at least
/// `fft_size` zeros on each side so every sample is fully covered; outputs
/// are cropped back to the input length, one per mask.
pub fn enhance(x: &AudioBuffer, provider: &dyn MaskProvider, cfg: &StftConfig) -> Result<Vec<AudioBuffer>> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let (front, total) = offline_layout(x.len(), cfg);
    let padded = window_of(&x.samples, -(front as i64), total);
    let outs = enhance_segment(&padded, -(front as i64), provider, cfg, x.sample_rate)?;
    outs.into_iter()
        .map(|o| AudioBuffer::new(o[front..front + x.len()].to_vec(), x.sample_rate))
        .collect()
}
