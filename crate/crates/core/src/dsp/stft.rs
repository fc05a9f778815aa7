use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Overlap-add normalization in [`istft`] never divides by less than this.
/// Only the first and last few samples of a signal (where sqrt-Hann coverage
/// vanishes) are affected; it keeps mask errors there from being amplified.
pub const COLA_FLOOR: f64 = 1e-2;

/// Floor for [`istft_exact`]: only samples with no window coverage at all are clamped.
pub const COLA_FLOOR_EXACT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// Periodic square-root Hann, used for both analysis and synthesis.
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..n)
                .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).max(0.0).sqrt())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop_size: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 512, hop_size: 256, window: Window::SqrtHann }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, hop_size: usize, window: Window) -> Result<Self> {
        let cfg = Self { fft_size, hop_size, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::InvalidArgument(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.hop_size == 0 || self.fft_size % self.hop_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "hop_size {} does not divide fft_size {}",
                self.hop_size, self.fft_size
            )));
        }
        let w = self.window.coefficients(self.fft_size);
        let sums: Vec<f64> = (0..self.hop_size)
            .map(|r| (r..self.fft_size).step_by(self.hop_size).map(|i| w[i] * w[i]).sum())
            .collect();
        let c = sums[0];
        if sums.iter().any(|s| (s - c).abs() > 1e-9 * c.max(1.0)) {
            return Err(Error::InvalidArgument("window pair is not constant-overlap-add at this hop".into()));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples (0 if shorter than one frame).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            1 + (len - self.fft_size) / self.hop_size
        }
    }

    pub fn samples_for(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_size + self.fft_size
        }
    }

    /// Per-sample overlap-add normalization for `frames` frames, floored.
    fn ola_norm(&self, frames: usize, floor: f64) -> Vec<f64> {
        let w = self.window.coefficients(self.fft_size);
        let mut norm = vec![0.0; self.samples_for(frames)];
        for t in 0..frames {
            let off = t * self.hop_size;
            for (i, wi) in w.iter().enumerate() {
                norm[off + i] += wi * wi;
            }
        }
        norm.iter_mut().for_each(|v| *v = v.max(floor));
        norm
    }
}

/// Complex time-frequency array, row-major `[frames][freq_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let bins = config.freq_bins();
        Self { frames, bins, data: vec![Complex64::default(); frames * bins], config }
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins + f]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    /// Elementwise complex product with a mask of the same shape.
    pub fn apply_mask(&self, mask: &ComplexMask) -> Result<Spectrogram> {
        if mask.shape() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs spectrogram {:?}",
                mask.shape(),
                self.shape()
            )));
        }
        Ok(Spectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().zip(&mask.values).map(|(s, m)| s * m).collect(),
            config: self.config,
        })
    }
}

/// Per-bin complex multiplier, same layout as [`Spectrogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
}

impl ComplexMask {
    pub fn constant(frames: usize, bins: usize, value: Complex64) -> Self {
        Self { frames, bins, values: vec![value; frames * bins] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    /// Ratio `target / mixture` per bin; bins where the mixture vanishes get 0.
    pub fn ratio(target: &Spectrogram, mixture: &Spectrogram) -> Result<Self> {
        if target.shape() != mixture.shape() {
            return Err(Error::ShapeMismatch("ratio mask operands differ in shape".into()));
        }
        let values = target
            .data
            .iter()
            .zip(&mixture.data)
            .map(|(t, m)| if m.norm_sqr() > 1e-30 { t / m } else { Complex64::default() })
            .collect();
        Ok(Self { frames: target.frames, bins: target.bins, values })
    }
}

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
}

pub fn stft(x: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    stft_samples(&x.samples, cfg)
}

pub(crate) fn stft_samples(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = cfg.fft_size;
    if x.len() < n {
        return Err(Error::InsufficientSamples { needed: n, got: x.len() });
    }
    let frames = cfg.frames_for(x.len());
    let bins = cfg.freq_bins();
    let w = cfg.window.coefficients(n);
    let p = plans(n);
    let mut buf = vec![Complex64::default(); n];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let off = t * cfg.hop_size;
        for i in 0..n {
            buf[i] = Complex64::new(x[off + i] * w[i], 0.0);
        }
        p.fwd.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, data, config: *cfg })
}

/// Weighted overlap-add inverse. Output length is `(frames - 1) * hop + fft_size`.
pub fn istft(s: &Spectrogram) -> Result<AudioBuffer> {
    istft_floored(s, COLA_FLOOR)
}

/// [`istft`] with the overlap-add normalization applied exactly wherever any
/// window covers a sample, so unmasked spectrograms invert exactly up to the
/// very edges. Used at inference time.
pub fn istft_exact(s: &Spectrogram) -> Result<AudioBuffer> {
    istft_floored(s, COLA_FLOOR_EXACT)
}

fn istft_floored(s: &Spectrogram, floor: f64) -> Result<AudioBuffer> {
    let cfg = s.config;
    if s.bins != cfg.freq_bins() || s.data.len() != s.frames * s.bins {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram with {} bins / {} values does not fit fft_size {}",
            s.bins,
            s.data.len(),
            cfg.fft_size
        )));
    }
    let n = cfg.fft_size;
    let w = cfg.window.coefficients(n);
    let norm = cfg.ola_norm(s.frames, floor);
    let p = plans(n);
    let mut out = vec![0.0; cfg.samples_for(s.frames)];
    let mut buf = vec![Complex64::default(); n];
    let scale = 1.0 / n as f64;
    for t in 0..s.frames {
        let row = &s.data[t * s.bins..(t + 1) * s.bins];
        hermitian_extend(row, &mut buf);
        p.inv.process(&mut buf);
        let off = t * cfg.hop_size;
        for i in 0..n {
            out[off + i] += buf[i].re * scale * w[i];
        }
    }
    for (o, d) in out.iter_mut().zip(&norm) {
        *o /= d;
    }
    Ok(AudioBuffer::from_samples(out))
}

/// Gradient of a scalar loss with respect to the real and imaginary parts of
/// every bin (packed as `re + i*im`), given the gradient with respect to the
/// [`istft`] output samples.
pub fn istft_adjoint(grad_out: &[f64], frames: usize, cfg: &StftConfig) -> Result<Vec<Complex64>> {
    let n = cfg.fft_size;
    if grad_out.len() != cfg.samples_for(frames) {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} samples, {} frames need {}",
            grad_out.len(),
            frames,
            cfg.samples_for(frames)
        )));
    }
    let bins = cfg.freq_bins();
    let w = cfg.window.coefficients(n);
    let norm = cfg.ola_norm(frames, COLA_FLOOR);
    let p = plans(n);
    let mut buf = vec![Complex64::default(); n];
    let mut out = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let off = t * cfg.hop_size;
        for i in 0..n {
            buf[i] = Complex64::new(w[i] * grad_out[off + i] / norm[off + i], 0.0);
        }
        p.fwd.process(&mut buf);
        for (k, g) in buf[..bins].iter().enumerate() {
            let edge = k == 0 || k == n / 2;
            let c = if edge { 1.0 } else { 2.0 } / n as f64;
            out.push(if edge { Complex64::new(g.re * c, 0.0) } else { g * c });
        }
    }
    Ok(out)
}

/// Gradient with respect to the input samples of [`stft`], given the packed
/// gradient (`d/d re + i * d/d im`) with respect to every bin.
pub fn stft_adjoint(grad: &[Complex64], frames: usize, cfg: &StftConfig) -> Result<Vec<f64>> {
    let n = cfg.fft_size;
    let bins = cfg.freq_bins();
    if grad.len() != frames * bins {
        return Err(Error::ShapeMismatch(format!("{} bin gradients for {frames} frames of {bins} bins", grad.len())));
    }
    let w = cfg.window.coefficients(n);
    let p = plans(n);
    let mut buf = vec![Complex64::default(); n];
    let mut out = vec![0.0; cfg.samples_for(frames)];
    for t in 0..frames {
        buf.iter_mut().for_each(|b| *b = Complex64::default());
        buf[..bins].copy_from_slice(&grad[t * bins..(t + 1) * bins]);
        p.inv.process(&mut buf);
        let off = t * cfg.hop_size;
        for i in 0..n {
            out[off + i] += w[i] * buf[i].re;
        }
    }
    Ok(out)
}

fn hermitian_extend(row: &[Complex64], buf: &mut [Complex64]) {
    let n = buf.len();
    buf[..row.len()].copy_from_slice(row);
    for k in row.len()..n {
        buf[k] = row[n - k].conj();
    }
}
