//! Signal-processing primitives shared by every other module.

mod biquad;
mod resample;
mod stft;
pub mod wav;

pub use biquad::{biquad_apply, Biquad, BiquadCascade, SHELF_SLOPE};
pub use resample::resample;
pub use stft::{istft, istft_adjoint, istft_exact, stft, stft_adjoint, ComplexMask, Spectrogram, StftConfig, Window};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Canonical processing rate. Loaders resample everything to this.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate, nominal full scale 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Buffer at the canonical rate; caller guarantees finite samples.
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Elementwise sum; lengths must match.
    pub fn add(&self, other: &AudioBuffer) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add buffers of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn sub(&self, other: &AudioBuffer) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// Truncates or zero-pads to `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples, sample_rate: self.sample_rate }
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// RMS level in dB relative to full scale; `-inf` for silence or an empty buffer.
pub fn rms_dbfs(x: &AudioBuffer) -> f64 {
    if x.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ms = x.energy() / x.len() as f64;
    10.0 * ms.log10()
}

/// Signals at or below this level are treated as silent by [`normalize_rms`].
pub const SILENCE_DBFS: f64 = -100.0;

pub fn normalize_rms(x: &AudioBuffer, target_dbfs: f64) -> Result<AudioBuffer> {
    let level = rms_dbfs(x);
    if !(level > SILENCE_DBFS) {
        return Err(Error::SilentSignal);
    }
    Ok(x.scaled(db_to_gain(target_dbfs - level)))
}

/// Linear convolution truncated to `len(x)` samples, computed with an FFT.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::default());
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::default());
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..x.len()].iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_wave_is_zero_dbfs() {
        let x = AudioBuffer::from_samples((0..1600).map(|i| if (i / 8) % 2 == 0 { 1.0 } else { -1.0 }).collect());
        assert!(rms_dbfs(&x).abs() < 1e-12);
    }

    #[test]
    fn unit_sine_level() {
        // 1 kHz at 16 kHz: exactly 16 samples per period, so the RMS is exact.
        let x = AudioBuffer::from_samples(
            (0..16000).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()).collect(),
        );
        let expected = 20.0 * (1.0 / 2f64.sqrt()).log10();
        assert!((rms_dbfs(&x) - expected).abs() < 1e-9);
        assert!((expected + 3.0103).abs() < 1e-4);
    }

    #[test]
    fn normalize_hits_target() {
        let x = AudioBuffer::from_samples((0..999).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.4).collect());
        let y = normalize_rms(&x, -20.0).unwrap();
        assert!((rms_dbfs(&y) + 20.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_rejects_silence() {
        let x = AudioBuffer::zeros(100, SAMPLE_RATE);
        assert!(matches!(normalize_rms(&x, -20.0), Err(Error::SilentSignal)));
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let h: Vec<f64> = (0..40).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let fast = convolve_truncated(&x, &h);
        for n in 0..x.len() {
            let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }
}
