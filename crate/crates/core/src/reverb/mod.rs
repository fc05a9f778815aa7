//! Room impulse responses: image-method synthesis, first-tap normalization,
//! RT60 estimation, augmentation, partial-dereverberation targets and
//! reverberant mixing with separate speech and noise tail gains.

mod image;
pub mod library;
mod rt60;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use image::{image_method_rir, order_for, RoomSpec, TapInterp, MAX_REFLECTION};
pub use library::{LibraryConfig, RirEntry, RirLibrary};
pub use rt60::{energy_decay_db, estimate_rt60_samples};

use crate::dsp::{convolve_truncated, db_to_gain, resample, AudioBuffer};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Taps at or above this fraction of the peak magnitude (-40 dB) count as the first tap.
pub const FIRST_TAP_REL: f64 = 0.01;

/// Unaltered head of a partial-dereverberation target.
pub const PARTIAL_KEEP_S: f64 = 0.020;
pub const PARTIAL_MAX_RT60_S: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: AudioBuffer,
    pub first_tap_index: usize,
    /// `None` when no decay could be measured (for example a single tap).
    pub rt60_s: Option<f64>,
}

pub(crate) fn first_tap(taps: &[f64]) -> Option<usize> {
    let peak = taps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    taps.iter().position(|v| v.abs() >= FIRST_TAP_REL * peak)
}

impl Rir {
    pub fn from_taps(taps: AudioBuffer) -> Result<Self> {
        let first_tap_index = first_tap(&taps.samples).ok_or(Error::EmptyRir)?;
        Ok(Self { taps, first_tap_index, rt60_s: None })
    }

    /// A single unit tap at index 0.
    pub fn unit(len: usize, sample_rate: u32) -> Self {
        let mut samples = vec![0.0; len.max(1)];
        samples[0] = 1.0;
        Self { taps: AudioBuffer { samples, sample_rate }, first_tap_index: 0, rt60_s: None }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn with_rt60(mut self) -> Self {
        self.rt60_s = estimate_rt60(&self).ok();
        self
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self { taps: self.taps.fit_to(len.min(self.len())), ..self.clone() }
    }

    /// `h0 + gain * h_{>0}` for a normalized RIR.
    pub fn tail_scaled(&self, gain: f64) -> Self {
        let mut taps = self.taps.clone();
        taps.samples.iter_mut().skip(1).for_each(|v| *v *= gain);
        Self { taps, first_tap_index: 0, rt60_s: None }
    }

    fn has_tail(&self) -> bool {
        self.taps.samples.iter().skip(1).any(|v| *v != 0.0)
    }
}

/// Shifts the first significant tap to index 0 and scales it to exactly 1.
/// Length is preserved (zeros fill the end).
pub fn normalize_first_tap(h: &Rir) -> Result<Rir> {
    let i = first_tap(&h.taps.samples).ok_or(Error::EmptyRir)?;
    let g = 1.0 / h.taps.samples[i];
    let mut samples: Vec<f64> = h.taps.samples[i..].iter().map(|v| v * g).collect();
    samples[0] = 1.0;
    samples.resize(h.len(), 0.0);
    Ok(Rir { taps: AudioBuffer { samples, sample_rate: h.taps.sample_rate }, first_tap_index: 0, rt60_s: h.rt60_s })
}

pub fn estimate_rt60(h: &Rir) -> Result<f64> {
    estimate_rt60_samples(&h.taps.samples, h.taps.sample_rate)
}

/// Resamples by `resample_ratio` (delays scale by the ratio), applies
/// `exp(-t / extra_decay_tau)`, and renormalizes. Length is preserved.
pub fn augment_rir(h: &Rir, resample_ratio: f64, extra_decay_tau: f64) -> Result<Rir> {
    let mut taps = if resample_ratio == 1.0 {
        h.taps.clone()
    } else {
        resample(&h.taps, resample_ratio)?.fit_to(h.len())
    };
    if extra_decay_tau.is_finite() {
        if !(extra_decay_tau > 0.0) {
            return Err(Error::InvalidArgument(format!("decay constant {extra_decay_tau}")));
        }
        let fs = taps.sample_rate as f64;
        taps.samples.iter_mut().enumerate().for_each(|(i, v)| *v *= (-(i as f64) / fs / extra_decay_tau).exp());
    }
    Ok(normalize_first_tap(&Rir { taps, first_tap_index: 0, rt60_s: None })?.with_rt60())
}

fn decayed_after(h: &Rir, keep: usize, tau: f64) -> Rir {
    let fs = h.taps.sample_rate as f64;
    let mut taps = h.taps.clone();
    for (i, v) in taps.samples.iter_mut().enumerate().skip(keep) {
        *v *= (-((i - keep) as f64) / fs / tau).exp();
    }
    Rir { taps, first_tap_index: h.first_tap_index, rt60_s: None }
}

/// Keeps the first 20 ms and decays the rest with the slowest exponential
/// (from a geometric search) that brings the RT60 below 0.2 s.
pub fn make_partial_dereverb_target(h: &Rir) -> Rir {
    let below = |r: &Rir| estimate_rt60(r).map_or(true, |t| t < PARTIAL_MAX_RT60_S);
    if below(h) {
        return h.clone().with_rt60();
    }
    let keep = ((PARTIAL_KEEP_S * h.taps.sample_rate as f64).round() as usize).min(h.len());
    let mut tau = 0.1;
    let mut out = decayed_after(h, keep, tau);
    for _ in 0..60 {
        if below(&out) {
            break;
        }
        tau *= 0.7;
        out = decayed_after(h, keep, tau);
    }
    out.with_rt60()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DereverbMode {
    /// The foreground label keeps the full (tail-scaled) reverberation.
    #[default]
    NoDereverb,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverbMixConfig {
    pub alpha_db: [f64; 2],
    pub beta_db: [f64; 2],
    pub reverb_noise_prob: f64,
}

impl Default for ReverbMixConfig {
    fn default() -> Self {
        Self { alpha_db: [-25.0, 0.0], beta_db: [-25.0, 0.0], reverb_noise_prob: 0.6 }
    }
}

/// One draw of the mixing gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbMixParams {
    #[serde(with = "crate::serde_f64")]
    pub alpha_db: f64,
    #[serde(with = "crate::serde_f64")]
    pub beta_db: f64,
    pub reverb_noise: bool,
}

impl ReverbMixParams {
    pub const DRY: Self = Self { alpha_db: f64::NEG_INFINITY, beta_db: f64::NEG_INFINITY, reverb_noise: false };
}

impl ReverbMixConfig {
    pub fn sample(&self, rng: &mut impl Rng) -> ReverbMixParams {
        ReverbMixParams {
            alpha_db: rng.random_range(self.alpha_db[0]..=self.alpha_db[1]),
            beta_db: rng.random_range(self.beta_db[0]..=self.beta_db[1]),
            reverb_noise: rng.random_bool(self.reverb_noise_prob),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverbMix {
    pub x: AudioBuffer,
    pub label_fg: AudioBuffer,
    pub label_bg: AudioBuffer,
    pub mode: DereverbMode,
}

fn convolve(x: &AudioBuffer, h: &Rir) -> AudioBuffer {
    if !h.has_tail() {
        return x.scaled(h.taps.samples[0]);
    }
    AudioBuffer { samples: convolve_truncated(&x.samples, &h.taps.samples), sample_rate: x.sample_rate }
}

/// `x = s * (h0 + alpha h_{>0}) + n * (h0 + beta h_{>0})`, the noise term
/// reverberated only when `p.reverb_noise`; `label_bg = x - label_fg`.
pub fn reverberant_mix(s: &AudioBuffer, n: &AudioBuffer, h: &Rir, p: &ReverbMixParams, mode: DereverbMode) -> Result<ReverbMix> {
    if s.len() != n.len() {
        return Err(Error::ShapeMismatch(format!("speech {} vs noise {} samples", s.len(), n.len())));
    }
    if s.sample_rate != n.sample_rate || s.sample_rate != h.taps.sample_rate {
        return Err(Error::InvalidArgument("speech, noise and RIR sample rates differ".into()));
    }
    if h.len() > s.len() {
        return Err(Error::RirTooLong { rir: h.len(), signal: s.len() });
    }
    if h.first_tap_index != 0 || h.taps.samples.first() != Some(&1.0) {
        return Err(Error::InvalidArgument("RIR must be first-tap normalized".into()));
    }
    let hs = h.tail_scaled(db_to_gain(p.alpha_db));
    let s_rev = convolve(s, &hs);
    let n_rev = if p.reverb_noise { convolve(n, &h.tail_scaled(db_to_gain(p.beta_db))) } else { n.clone() };
    let x = s_rev.add(&n_rev)?;
    let label_fg = match mode {
        DereverbMode::NoDereverb => s_rev,
        DereverbMode::Partial => convolve(s, &make_partial_dereverb_target(&hs)),
    };
    let label_bg = x.sub(&label_fg)?;
    Ok(ReverbMix { x, label_fg, label_bg, mode })
}

pub fn reverberant_mix_random(
    s: &AudioBuffer,
    n: &AudioBuffer,
    h: &Rir,
    cfg: &ReverbMixConfig,
    rng: &mut impl Rng,
    mode: DereverbMode,
) -> Result<(ReverbMix, ReverbMixParams)> {
    let p = cfg.sample(rng);
    Ok((reverberant_mix(s, n, h, &p, mode)?, p))
}
