//! Training losses: a frequency-weighted spectral L1 loss that penalizes
//! under-estimation of speech harder than over-estimation, and a waveform L1
//! loss, both differentiated exactly back to the complex masks.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{istft, istft_adjoint, stft, stft_adjoint, AudioBuffer, ComplexMask, Spectrogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_audio: f64,
    pub lambda_spectral: f64,
    pub lambda_over: f64,
    pub lambda_under: f64,
    pub lambda_fg: f64,
    pub lambda_bg: f64,
    pub freq_weight_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_audio: 1.0,
            lambda_spectral: 1.5,
            lambda_over: 2.6,
            lambda_under: 13.3,
            lambda_fg: 2.0,
            lambda_bg: 0.4,
            freq_weight_gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_audio,
            self.lambda_spectral,
            self.lambda_over,
            self.lambda_under,
            self.lambda_fg,
            self.lambda_bg,
            self.freq_weight_gamma,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `w(f) = 1 + gamma * f / (F - 1)`, rising linearly towards the top bin.
pub fn frequency_weight(f: usize, bins: usize, gamma: f64) -> f64 {
    if bins < 2 {
        1.0
    } else {
        1.0 + gamma * f as f64 / (bins - 1) as f64
    }
}

/// Mean over bins of `w(f) * lambda * |Y - Y_hat|` for row-major `[frames][bins]`
/// magnitudes, where `lambda` is `lambda_over` when `Y_hat >= Y` and
/// `lambda_under` otherwise (both 1 when `biased` is false).
/// Returns the loss and its gradient with respect to `y_hat`.
pub fn spectral_biased_loss(y_hat: &[f64], y: &[f64], bins: usize, w: &LossWeights, biased: bool) -> Result<(f64, Vec<f64>)> {
    if y_hat.len() != y.len() || bins == 0 || y.len() % bins != 0 {
        return Err(Error::ShapeMismatch(format!("magnitudes {} vs {} with {bins} bins", y_hat.len(), y.len())));
    }
    if y_hat.iter().chain(y).any(|v| *v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidArgument("magnitudes must be non-negative".into()));
    }
    if y.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let (over, under) = if biased { (w.lambda_over, w.lambda_under) } else { (1.0, 1.0) };
    let weights: Vec<f64> = (0..bins).map(|f| frequency_weight(f, bins, w.freq_weight_gamma)).collect();
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; y.len()];
    for (i, (&a, &b)) in y_hat.iter().zip(y).enumerate() {
        let wf = weights[i % bins];
        let d = a - b;
        if d >= 0.0 {
            loss += wf * over * d;
            if d > 0.0 {
                grad[i] = wf * over / n;
            }
        } else {
            loss -= wf * under * d;
            grad[i] = -wf * under / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean absolute sample difference and its subgradient (0 at ties).
pub fn audio_l1_loss(y_hat: &AudioBuffer, y: &AudioBuffer) -> Result<(f64, Vec<f64>)> {
    audio_l1(&y_hat.samples, &y.samples)
}

fn audio_l1(y_hat: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y_hat.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("signals of {} and {} samples", y_hat.len(), y.len())));
    }
    if y.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = y.len() as f64;
    let loss = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let grad = y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| if a > b { 1.0 / n } else if a < b { -1.0 / n } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskLoss {
    pub audio: f64,
    pub spectral: f64,
    /// `lambda_k * (lambda_audio * audio + lambda_spectral * spectral)`.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_mask: Vec<MaskLoss>,
}

impl LossBreakdown {
    pub fn fg(&self) -> f64 {
        self.per_mask.first().map_or(0.0, |m| m.weighted)
    }

    pub fn bg(&self) -> f64 {
        self.per_mask.iter().skip(1).map(|m| m.weighted).sum()
    }
}

/// Reference waveform and magnitudes for one target. The waveform is
/// `istft(stft(target))`, the best any mask on this STFT grid can reach, and
/// the magnitudes are those of its STFT.
#[derive(Debug, Clone)]
pub struct Target {
    pub spec: Spectrogram,
    pub wave: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Target {
    pub fn new(target: &AudioBuffer, cfg: &crate::dsp::StftConfig) -> Result<Self> {
        let spec = stft(target, cfg)?;
        let wave = istft(&spec)?.samples;
        let magnitudes = stft(&AudioBuffer::from_samples(wave.clone()), cfg)?.magnitudes();
        Ok(Self { spec, wave, magnitudes })
    }
}

/// Loss of one mask against its prepared target, plus the cotangent with respect to
/// the mask (packed `d/d re + i * d/d im`).
pub fn mask_loss_and_grad(
    mask: &ComplexMask,
    s_x: &Spectrogram,
    target: &Target,
    lambda_k: f64,
    biased: bool,
    w: &LossWeights,
) -> Result<(MaskLoss, Vec<Complex64>)> {
    if target.spec.shape() != s_x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "target spectrogram {:?} vs mixture {:?}",
            target.spec.shape(),
            s_x.shape()
        )));
    }
    let est = s_x.apply_mask(mask)?;
    let wave = istft(&est)?.samples;
    let (audio, mut d_wave) = audio_l1(&wave, &target.wave)?;
    let resynth = stft(&AudioBuffer::from_samples(wave), &est.config)?;
    let (spectral, d_mag) = spectral_biased_loss(&resynth.magnitudes(), &target.magnitudes, est.bins, w, biased)?;

    let ka = lambda_k * w.lambda_audio;
    let ks = lambda_k * w.lambda_spectral;
    let d_resynth: Vec<Complex64> = resynth
        .data
        .iter()
        .zip(&d_mag)
        .map(|(c, g)| {
            let r = c.norm();
            if r > 0.0 { c * (g * ks / r) } else { Complex64::default() }
        })
        .collect();
    let d_from_spec = stft_adjoint(&d_resynth, resynth.frames, &est.config)?;
    d_wave.iter_mut().zip(&d_from_spec).for_each(|(a, b)| *a = *a * ka + b);
    let d_est = istft_adjoint(&d_wave, est.frames, &est.config)?;
    let grad = d_est.iter().zip(&s_x.data).map(|(g, x)| g * x.conj()).collect();
    let weighted = lambda_k * (w.lambda_audio * audio + w.lambda_spectral * spectral);
    Ok((MaskLoss { audio, spectral, weighted }, grad))
}

/// Mask 0 is the foreground (weighted by `lambda_fg`, biased indicators);
/// every further mask is weighted by `lambda_bg` with unbiased indicators.
pub fn combined_loss_prepared(
    masks: &[ComplexMask],
    s_x: &Spectrogram,
    targets: &[Target],
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<Vec<Complex64>>)> {
    if masks.len() != targets.len() || masks.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} masks for {} targets", masks.len(), targets.len())));
    }
    let mut per_mask = Vec::with_capacity(masks.len());
    let mut grads = Vec::with_capacity(masks.len());
    for (k, (m, t)) in masks.iter().zip(targets).enumerate() {
        let (lambda_k, biased) = if k == 0 { (w.lambda_fg, true) } else { (w.lambda_bg, false) };
        let (l, g) = mask_loss_and_grad(m, s_x, t, lambda_k, biased, w)?;
        per_mask.push(l);
        grads.push(g);
    }
    let total = per_mask.iter().map(|m| m.weighted).sum();
    Ok((LossBreakdown { total, per_mask }, grads))
}

pub fn combined_loss_and_mask_grad(
    masks: &[ComplexMask],
    s_x: &Spectrogram,
    targets: &[AudioBuffer],
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<Vec<Complex64>>)> {
    if masks.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} masks for {} targets", masks.len(), targets.len())));
    }
    let prepared = targets.iter().map(|t| Target::new(t, &s_x.config)).collect::<Result<Vec<_>>>()?;
    combined_loss_prepared(masks, s_x, &prepared, w)
}
