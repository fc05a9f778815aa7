use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Shelf slope used by the shelving designs. At 1.25 the response reaches
/// within 0.2 dB of the full shelf gain one octave past the shelf frequency.
pub const SHELF_SLOPE: f64 = 1.25;

/// Second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad { b0: 1.0, b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0 };

    /// `[b0, b1, b2, a1, a2]`.
    pub fn from_coeffs(c: [f64; 5]) -> Self {
        Self { b0: c[0], b1: c[1], b2: c[2], a1: c[3], a2: c[4] }
    }

    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Self { b0: b[0] / a[0], b1: b[1] / a[0], b2: b[2] / a[0], a1: a[1] / a[0], a2: a[2] / a[0] }
    }

    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn low_shelf(freq_hz: f64, gain_db: f64, fs: f64) -> Self {
        let (a, cw, alpha) = shelf_terms(freq_hz, gain_db, fs);
        let sa = a.sqrt();
        Self::normalized(
            [
                a * ((a + 1.0) - (a - 1.0) * cw + 2.0 * sa * alpha),
                2.0 * a * ((a - 1.0) - (a + 1.0) * cw),
                a * ((a + 1.0) - (a - 1.0) * cw - 2.0 * sa * alpha),
            ],
            [
                (a + 1.0) + (a - 1.0) * cw + 2.0 * sa * alpha,
                -2.0 * ((a - 1.0) + (a + 1.0) * cw),
                (a + 1.0) + (a - 1.0) * cw - 2.0 * sa * alpha,
            ],
        )
    }

    pub fn high_shelf(freq_hz: f64, gain_db: f64, fs: f64) -> Self {
        let (a, cw, alpha) = shelf_terms(freq_hz, gain_db, fs);
        let sa = a.sqrt();
        Self::normalized(
            [
                a * ((a + 1.0) + (a - 1.0) * cw + 2.0 * sa * alpha),
                -2.0 * a * ((a - 1.0) + (a + 1.0) * cw),
                a * ((a + 1.0) + (a - 1.0) * cw - 2.0 * sa * alpha),
            ],
            [
                (a + 1.0) - (a - 1.0) * cw + 2.0 * sa * alpha,
                2.0 * ((a - 1.0) - (a + 1.0) * cw),
                (a + 1.0) - (a - 1.0) * cw - 2.0 * sa * alpha,
            ],
        )
    }

    /// Peaking (bell) filter, symmetric around `freq_hz` on a log-frequency axis.
    pub fn peaking(freq_hz: f64, gain_db: f64, q: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * freq_hz / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        Self::normalized(
            [1.0 + alpha * a, -2.0 * cw, 1.0 - alpha * a],
            [1.0 + alpha / a, -2.0 * cw, 1.0 - alpha / a],
        )
    }

    pub fn lowpass(freq_hz: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq_hz / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        Self::normalized(
            [(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0],
            [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
        )
    }

    /// Transposed direct form II, zero initial state.
    pub fn apply(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        if !self.is_stable() {
            return Err(Error::UnstableFilter { a1: self.a1, a2: self.a2 });
        }
        let (mut z1, mut z2) = (0.0, 0.0);
        let samples = x
            .samples
            .iter()
            .map(|&v| {
                let y = self.b0 * v + z1;
                z1 = self.b1 * v - self.a1 * y + z2;
                z2 = self.b2 * v - self.a2 * y;
                y
            })
            .collect();
        Ok(AudioBuffer { samples, sample_rate: x.sample_rate })
    }

    /// Magnitude response in dB at `freq_hz`.
    pub fn gain_db_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        let z1 = num_complex::Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b0 + z1 * self.b1 + z2 * self.b2;
        let den = 1.0 + z1 * self.a1 + z2 * self.a2;
        20.0 * (num / den).norm().log10()
    }
}

fn shelf_terms(freq_hz: f64, gain_db: f64, fs: f64) -> (f64, f64, f64) {
    let a = 10f64.powf(gain_db / 40.0);
    let w0 = 2.0 * PI * freq_hz / fs;
    let alpha = w0.sin() / 2.0 * ((a + 1.0 / a) * (1.0 / SHELF_SLOPE - 1.0) + 2.0).sqrt();
    (a, w0.cos(), alpha)
}

pub fn biquad_apply(x: &AudioBuffer, coeffs: [f64; 5]) -> Result<AudioBuffer> {
    Biquad::from_coeffs(coeffs).apply(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade(pub Vec<Biquad>);

impl BiquadCascade {
    /// Butterworth low-pass of even `order` as `order / 2` biquad sections.
    pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Self {
        assert!(order >= 2 && order % 2 == 0, "order must be even");
        let sections = order / 2;
        Self(
            (1..=sections)
                .map(|k| {
                    let theta = PI * (2 * k - 1) as f64 / (2 * order) as f64;
                    Biquad::lowpass(cutoff_hz, 1.0 / (2.0 * theta.sin()), fs)
                })
                .collect(),
        )
    }

    pub fn apply(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        let mut y = x.clone();
        for s in &self.0 {
            y = s.apply(&y)?;
        }
        Ok(y)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn sine(freq: f64, len: usize, fs: f64) -> AudioBuffer {
        AudioBuffer::from_samples((0..len).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect())
    }

    /// Steady-state sine gain, skipping the filter transient.
    pub fn measured_gain_db(filtered: &AudioBuffer, reference: &AudioBuffer) -> f64 {
        let skip = filtered.len() / 2;
        let e = |b: &AudioBuffer| b.samples[skip..].iter().map(|v| v * v).sum::<f64>();
        10.0 * (e(filtered) / e(reference)).log10()
    }

    #[test]
    fn identity_passes_through() {
        let x = sine(440.0, 1000, 16000.0);
        assert_eq!(biquad_apply(&x, [1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), x);
    }

    #[test]
    fn unstable_rejected() {
        let x = sine(440.0, 10, 16000.0);
        assert!(matches!(biquad_apply(&x, [1.0, 0.0, 0.0, 0.0, 1.2]), Err(Error::UnstableFilter { .. })));
        assert!(biquad_apply(&x, [1.0, 0.0, 0.0, -2.1, 0.99]).is_err());
    }

    #[test]
    fn low_shelf_gain_below_corner() {
        let fs = 16000.0;
        let f = Biquad::low_shelf(100.0, 10.0, fs);
        let x = sine(50.0, 32000, fs);
        let g = measured_gain_db(&f.apply(&x).unwrap(), &x);
        assert!((g - 10.0).abs() <= 0.5, "{g}");
    }

    #[test]
    fn high_shelf_gain_above_corner() {
        let fs = 16000.0;
        let f = Biquad::high_shelf(4000.0, -10.0, fs);
        let x = sine(7000.0, 16000, fs);
        let g = measured_gain_db(&f.apply(&x).unwrap(), &x);
        assert!((g + 10.0).abs() <= 0.5, "{g}");
    }

    #[test]
    fn peaking_centre_gain() {
        let f = Biquad::peaking(1000.0, 6.0, 1.0, 16000.0);
        assert!((f.gain_db_at(1000.0, 16000.0) - 6.0).abs() < 1e-9);
        // log-symmetric: an octave above and below look the same
        let lo = f.gain_db_at(500.0, 16000.0);
        let hi = f.gain_db_at(2000.0, 16000.0);
        assert!((lo - hi).abs() < 0.3);
    }

    #[test]
    fn butterworth_response() {
        let lp = BiquadCascade::butterworth_lowpass(8, 4000.0, 16000.0);
        let total = |f: f64| lp.0.iter().map(|s| s.gain_db_at(f, 16000.0)).sum::<f64>();
        assert!((total(4000.0) + 3.0103).abs() < 0.01);
        assert!(total(6000.0) < -40.0);
    }
}
