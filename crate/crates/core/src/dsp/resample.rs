use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Kernel length in output-rate taps.
const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Kaiser window sampled on `|r| <= 1`, linearly interpolated.
struct KaiserTable(Vec<f64>);

impl KaiserTable {
    const SIZE: usize = 4096;

    fn new() -> Self {
        let i0_beta = bessel_i0(KAISER_BETA);
        Self(
            (0..=Self::SIZE)
                .map(|k| {
                    let r = k as f64 / Self::SIZE as f64;
                    bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta
                })
                .collect(),
        )
    }

    fn at(&self, r: f64) -> f64 {
        let pos = r.abs().min(1.0) * Self::SIZE as f64;
        let k = (pos as usize).min(Self::SIZE - 1);
        let frac = pos - k as f64;
        self.0[k] * (1.0 - frac) + self.0[k + 1] * frac
    }
}

/// Stretches `x` to `round(len * ratio)` samples with Kaiser-windowed sinc
/// interpolation. Output sample `j` reads the input at time `j / ratio`; the
/// kernel cutoff follows the lower of the two Nyquist rates.
pub fn resample(x: &AudioBuffer, ratio: f64) -> Result<AudioBuffer> {
    if !(0.5..=2.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("resample ratio {ratio} outside [0.5, 2.0]")));
    }
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = (TAPS / 2) as f64 / cutoff;
    let window = KaiserTable::new();
    let n = x.len() as isize;
    let samples = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half).ceil() as isize).max(0);
            let hi = ((t + half).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                let d = t - i as f64;
                acc += x.samples[i as usize] * cutoff * sinc(cutoff * d) * window.at(d / half);
            }
            acc
        })
        .collect();
    Ok(AudioBuffer { samples, sample_rate: x.sample_rate })
}
