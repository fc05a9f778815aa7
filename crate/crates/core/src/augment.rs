//! The augmentation stack: random EQ, pitch shift, level normalization and
//! mixing, band limiting, clipping and empty-buffer simulation, plus the
//! nonstationary-noise score used for chunk oversampling.
//!
//! Every random choice is drawn up front into an [`AugmentRecipe`]; the
//! `apply_*` functions are deterministic given their draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{db_to_gain, normalize_rms, resample, rms_dbfs, AudioBuffer, Biquad, BiquadCascade};
use crate::error::{Error, Result};
use crate::reverb::{ReverbMixConfig, ReverbMixParams};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub eq_freq_range_hz: [f64; 2],
    pub eq_gain_db: f64,
    pub bell_q: [f64; 2],
    /// EQ centre frequencies are clamped to this fraction of the sample rate.
    pub eq_max_rel_freq: f64,
    pub pitch_ratio: [f64; 2],
    pub clip_fraction: [f64; 2],
    pub clip_prob: f64,
    pub empty_buffer_s: [f64; 2],
    pub empty_buffer_prob: f64,
    pub fg_skip_rms_dbfs: f64,
    pub norm_rms_dbfs: f64,
    pub bg_gain_db: [f64; 2],
    pub final_gain_db: [f64; 2],
    pub silence_fg_prob: f64,
    pub bandlimit_hz: [f64; 2],
    pub bandlimit_bg_prob: f64,
    pub bandlimit_fg_prob: f64,
    pub bandlimit_both_prob: f64,
    pub bandlimit_order: usize,
    pub reverb_prob: f64,
    pub reverb_mix: ReverbMixConfig,
    pub rir_resample: [f64; 2],
    pub rir_decay_prob: f64,
    pub rir_decay_tau_s: [f64; 2],
    pub nonstationary_window_s: f64,
    pub nonstationary_std_db: f64,
    pub nonstationary_weight: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            eq_freq_range_hz: [40.0, 8000.0],
            eq_gain_db: 10.0,
            bell_q: [0.5, 1.5],
            eq_max_rel_freq: 0.45,
            pitch_ratio: [0.9, 1.1],
            clip_fraction: [0.5, 1.0],
            clip_prob: 0.10,
            empty_buffer_s: [0.5, 1.0],
            empty_buffer_prob: 0.05,
            fg_skip_rms_dbfs: -38.0,
            norm_rms_dbfs: -20.0,
            bg_gain_db: [-30.0, 0.0],
            final_gain_db: [-25.0, 5.0],
            silence_fg_prob: 0.03,
            bandlimit_hz: [4000.0, 7000.0],
            bandlimit_bg_prob: 0.025,
            bandlimit_fg_prob: 0.025,
            bandlimit_both_prob: 0.05,
            bandlimit_order: 8,
            reverb_prob: 0.5,
            reverb_mix: ReverbMixConfig::default(),
            rir_resample: [0.9, 1.1],
            rir_decay_prob: 0.5,
            rir_decay_tau_s: [0.1, 1.0],
            nonstationary_window_s: 0.050,
            nonstationary_std_db: 3.0,
            nonstationary_weight: 3.0,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation disabled: no EQ, no pitch, no reverb, no level
    /// changes beyond normalization, no band limiting or degradation.
    pub fn neutral() -> Self {
        Self {
            eq_gain_db: 0.0,
            pitch_ratio: [1.0, 1.0],
            clip_prob: 0.0,
            empty_buffer_prob: 0.0,
            bg_gain_db: [0.0, 0.0],
            final_gain_db: [0.0, 0.0],
            silence_fg_prob: 0.0,
            bandlimit_bg_prob: 0.0,
            bandlimit_fg_prob: 0.0,
            bandlimit_both_prob: 0.0,
            reverb_prob: 0.0,
            rir_decay_prob: 0.0,
            rir_resample: [1.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("eq_freq_range_hz", self.eq_freq_range_hz),
            ("bell_q", self.bell_q),
            ("pitch_ratio", self.pitch_ratio),
            ("clip_fraction", self.clip_fraction),
            ("empty_buffer_s", self.empty_buffer_s),
            ("bg_gain_db", self.bg_gain_db),
            ("final_gain_db", self.final_gain_db),
            ("bandlimit_hz", self.bandlimit_hz),
            ("rir_resample", self.rir_resample),
            ("rir_decay_tau_s", self.rir_decay_tau_s),
            ("reverb_mix.alpha_db", self.reverb_mix.alpha_db),
            ("reverb_mix.beta_db", self.reverb_mix.beta_db),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is not ordered")));
            }
        }
        let probs = [
            self.clip_prob,
            self.empty_buffer_prob,
            self.silence_fg_prob,
            self.bandlimit_bg_prob,
            self.bandlimit_fg_prob,
            self.bandlimit_both_prob,
            self.reverb_prob,
            self.reverb_mix.reverb_noise_prob,
            self.rir_decay_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.bandlimit_bg_prob + self.bandlimit_fg_prob + self.bandlimit_both_prob > 1.0 {
            return Err(Error::Config("band-limit probabilities sum above 1".into()));
        }
        if self.eq_gain_db < 0.0 || self.bandlimit_order < 2 || self.bandlimit_order % 2 != 0 {
            return Err(Error::Config("eq_gain_db must be >= 0 and bandlimit_order even".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn log_uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    uniform(rng, [r[0].ln(), r[1].ln()]).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub freq_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqDraw {
    pub low_shelf: Band,
    pub high_shelf: Band,
    pub bells: [Band; 2],
}

impl EqDraw {
    pub const FLAT: Self = {
        let b = Band { freq_hz: 1000.0, gain_db: 0.0, q: 1.0 };
        Self { low_shelf: b, high_shelf: b, bells: [b, b] }
    };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let mut band = |q: f64| Band {
            freq_hz: log_uniform(rng, cfg.eq_freq_range_hz),
            gain_db: uniform(rng, [-cfg.eq_gain_db, cfg.eq_gain_db]),
            q,
        };
        let low_shelf = band(f64::NAN);
        let high_shelf = band(f64::NAN);
        let mut bells = [band(0.0), band(0.0)];
        for b in &mut bells {
            b.q = uniform(rng, cfg.bell_q);
        }
        Self { low_shelf: Band { q: 0.0, ..low_shelf }, high_shelf: Band { q: 0.0, ..high_shelf }, bells }
    }

    pub fn filters(&self, fs: f64, max_rel_freq: f64) -> Vec<Biquad> {
        let f = |hz: f64| hz.min(max_rel_freq * fs);
        let mut out = vec![
            Biquad::low_shelf(f(self.low_shelf.freq_hz), self.low_shelf.gain_db, fs),
            Biquad::high_shelf(f(self.high_shelf.freq_hz), self.high_shelf.gain_db, fs),
        ];
        out.extend(self.bells.iter().map(|b| Biquad::peaking(f(b.freq_hz), b.gain_db, b.q, fs)));
        out
    }
}

pub fn apply_eq(x: &AudioBuffer, d: &EqDraw, cfg: &AugmentConfig) -> Result<AudioBuffer> {
    BiquadCascade(d.filters(x.sample_rate as f64, cfg.eq_max_rel_freq)).apply(x)
}

/// Low shelf, high shelf and two bells with freshly drawn parameters.
pub fn random_eq(x: &AudioBuffer, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<AudioBuffer> {
    apply_eq(x, &EqDraw::sample(cfg, rng), cfg)
}

/// Resamples by `ratio` and trims or zero-pads back to the input length.
pub fn apply_pitch(x: &AudioBuffer, ratio: f64) -> Result<AudioBuffer> {
    if ratio == 1.0 {
        return Ok(x.clone());
    }
    Ok(resample(x, ratio)?.fit_to(x.len()))
}

pub fn pitch_shift(x: &AudioBuffer, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<AudioBuffer> {
    apply_pitch(x, uniform(rng, cfg.pitch_ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DegradeDraw {
    /// Hard-clip threshold as a fraction of the peak.
    pub clip: Option<f64>,
    /// Seconds zeroed at the start.
    pub empty_s: Option<f64>,
}

impl DegradeDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let clip_on = rng.random_bool(cfg.clip_prob);
        let c = uniform(rng, cfg.clip_fraction);
        let empty_on = rng.random_bool(cfg.empty_buffer_prob);
        let d = uniform(rng, cfg.empty_buffer_s);
        Self { clip: clip_on.then_some(c), empty_s: empty_on.then_some(d) }
    }
}

pub fn apply_clip(x: &AudioBuffer, fraction: f64) -> AudioBuffer {
    let t = fraction * x.peak();
    AudioBuffer { samples: x.samples.iter().map(|v| v.clamp(-t, t)).collect(), sample_rate: x.sample_rate }
}

pub fn apply_empty_buffer(x: &AudioBuffer, seconds: f64) -> AudioBuffer {
    let n = ((seconds * x.sample_rate as f64).round() as usize).min(x.len());
    let mut y = x.clone();
    y.samples[..n].fill(0.0);
    y
}

pub fn apply_degrade(x: &AudioBuffer, d: &DegradeDraw) -> AudioBuffer {
    let mut y = x.clone();
    if let Some(c) = d.clip {
        if c < 1.0 {
            y = apply_clip(&y, c);
        }
    }
    if let Some(s) = d.empty_s {
        y = apply_empty_buffer(&y, s);
    }
    y
}

pub fn degrade(x: &AudioBuffer, cfg: &AugmentConfig, rng: &mut impl Rng) -> AudioBuffer {
    apply_degrade(x, &DegradeDraw::sample(cfg, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDraw {
    pub silence_fg: bool,
    pub bg_gain_db: f64,
    pub final_gain_db: f64,
}

impl LevelDraw {
    pub const UNITY: Self = Self { silence_fg: false, bg_gain_db: 0.0, final_gain_db: 0.0 };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        Self {
            silence_fg: rng.random_bool(cfg.silence_fg_prob),
            bg_gain_db: uniform(rng, cfg.bg_gain_db),
            final_gain_db: uniform(rng, cfg.final_gain_db),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelMix {
    pub mix: AudioBuffer,
    pub fg: AudioBuffer,
    pub bg: AudioBuffer,
    pub skip: bool,
    /// Component levels right after the per-signal normalization.
    pub normalized_dbfs: (f64, f64),
}

/// Skip if the foreground is too quiet; normalize both; turn the
/// background down; normalize the mix; apply a final gain to everything.
/// Outputs always satisfy `mix == fg + bg` by construction.
pub fn apply_level_and_mix(fg: &AudioBuffer, bg: &AudioBuffer, d: &LevelDraw, cfg: &AugmentConfig) -> Result<LevelMix> {
    if fg.len() != bg.len() {
        return Err(Error::ShapeMismatch(format!("foreground {} vs background {} samples", fg.len(), bg.len())));
    }
    let skipped = || LevelMix {
        mix: fg.add(bg).expect("lengths checked"),
        fg: fg.clone(),
        bg: bg.clone(),
        skip: true,
        normalized_dbfs: (rms_dbfs(fg), rms_dbfs(bg)),
    };
    let fg_level = rms_dbfs(fg);
    if !d.silence_fg && !(fg_level >= cfg.fg_skip_rms_dbfs) {
        return Ok(skipped());
    }
    let fg1 = if d.silence_fg { AudioBuffer::zeros(fg.len(), fg.sample_rate) } else { normalize_rms(fg, cfg.norm_rms_dbfs)? };
    let bg1 = match normalize_rms(bg, cfg.norm_rms_dbfs) {
        Ok(b) => b,
        Err(Error::SilentSignal) if !d.silence_fg => bg.clone(),
        Err(Error::SilentSignal) => return Ok(skipped()),
        Err(e) => return Err(e),
    };
    let normalized_dbfs = (rms_dbfs(&fg1), rms_dbfs(&bg1));
    let bg2 = bg1.scaled(db_to_gain(d.bg_gain_db));
    let mix_level = rms_dbfs(&fg1.add(&bg2)?);
    let g = if mix_level > crate::dsp::SILENCE_DBFS { db_to_gain(cfg.norm_rms_dbfs - mix_level) } else { 1.0 };
    let fin = g * db_to_gain(d.final_gain_db);
    let fg_out = fg1.scaled(fin);
    let bg_out = bg2.scaled(fin);
    let mix = fg_out.add(&bg_out)?;
    Ok(LevelMix { mix, fg: fg_out, bg: bg_out, skip: false, normalized_dbfs })
}

pub fn level_and_mix(fg: &AudioBuffer, bg: &AudioBuffer, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<LevelMix> {
    apply_level_and_mix(fg, bg, &LevelDraw::sample(cfg, rng), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandTarget {
    #[default]
    None,
    Background,
    Foreground,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandLimitDraw {
    pub target: BandTarget,
    pub cutoff_hz: f64,
}

impl BandLimitDraw {
    pub const OFF: Self = Self { target: BandTarget::None, cutoff_hz: 8000.0 };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let u: f64 = rng.random();
        let cutoff_hz = uniform(rng, cfg.bandlimit_hz);
        let a = cfg.bandlimit_bg_prob;
        let b = a + cfg.bandlimit_fg_prob;
        let c = b + cfg.bandlimit_both_prob;
        let target = if u < a {
            BandTarget::Background
        } else if u < b {
            BandTarget::Foreground
        } else if u < c {
            BandTarget::Both
        } else {
            BandTarget::None
        };
        Self { target, cutoff_hz }
    }
}

pub fn apply_band_limit(fg: &AudioBuffer, bg: &AudioBuffer, d: &BandLimitDraw, order: usize) -> Result<(AudioBuffer, AudioBuffer)> {
    let lp = |x: &AudioBuffer| BiquadCascade::butterworth_lowpass(order, d.cutoff_hz, x.sample_rate as f64).apply(x);
    Ok(match d.target {
        BandTarget::None => (fg.clone(), bg.clone()),
        BandTarget::Background => (fg.clone(), lp(bg)?),
        BandTarget::Foreground => (lp(fg)?, bg.clone()),
        BandTarget::Both => (lp(fg)?, lp(bg)?),
    })
}

pub fn band_limit(fg: &AudioBuffer, bg: &AudioBuffer, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(AudioBuffer, AudioBuffer)> {
    apply_band_limit(fg, bg, &BandLimitDraw::sample(cfg, rng), cfg.bandlimit_order)
}

/// Reverberation choices: which library entry, how it is augmented, and the mix gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbDraw {
    /// Index into the RIR library (taken modulo its size); `None` = dry.
    pub rir_index: Option<u64>,
    pub rir_resample: f64,
    /// `inf` = no extra decay.
    #[serde(with = "crate::serde_f64")]
    pub rir_decay_tau_s: f64,
    pub mix: ReverbMixParams,
}

impl ReverbDraw {
    pub const DRY: Self =
        Self { rir_index: None, rir_resample: 1.0, rir_decay_tau_s: f64::INFINITY, mix: ReverbMixParams::DRY };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let on = rng.random_bool(cfg.reverb_prob);
        let idx: u64 = rng.random();
        let rir_resample = uniform(rng, cfg.rir_resample);
        let decay_on = rng.random_bool(cfg.rir_decay_prob);
        let tau = uniform(rng, cfg.rir_decay_tau_s);
        let mix = cfg.reverb_mix.sample(rng);
        Self {
            rir_index: on.then_some(idx),
            rir_resample,
            rir_decay_tau_s: if decay_on { tau } else { f64::INFINITY },
            mix,
        }
    }
}

/// Every random choice for one datapoint. Each field comes from its own
/// keyed stream, so changing one part of the config never moves the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecipe {
    pub seed: u64,
    pub fg_eq: EqDraw,
    pub bg_eq: EqDraw,
    pub fg_pitch: f64,
    pub bg_pitch: f64,
    pub reverb: ReverbDraw,
    /// `None` skips the level stage entirely (no normalization).
    pub level: Option<LevelDraw>,
    pub band: BandLimitDraw,
    pub degrade: DegradeDraw,
}

impl AugmentRecipe {
    pub fn sample(cfg: &AugmentConfig, seed: u64) -> Self {
        Self {
            seed,
            fg_eq: EqDraw::sample(cfg, &mut stream(seed, "eq.fg")),
            bg_eq: EqDraw::sample(cfg, &mut stream(seed, "eq.bg")),
            fg_pitch: uniform(&mut stream(seed, "pitch.fg"), cfg.pitch_ratio),
            bg_pitch: uniform(&mut stream(seed, "pitch.bg"), cfg.pitch_ratio),
            reverb: ReverbDraw::sample(cfg, &mut stream(seed, "reverb")),
            level: Some(LevelDraw::sample(cfg, &mut stream(seed, "level"))),
            band: BandLimitDraw::sample(cfg, &mut stream(seed, "band")),
            degrade: DegradeDraw::sample(cfg, &mut stream(seed, "degrade")),
        }
    }

    /// Nothing applied: flat EQ, no pitch, dry, no level stage.
    pub fn identity() -> Self {
        Self {
            seed: 0,
            fg_eq: EqDraw::FLAT,
            bg_eq: EqDraw::FLAT,
            fg_pitch: 1.0,
            bg_pitch: 1.0,
            reverb: ReverbDraw::DRY,
            level: None,
            band: BandLimitDraw::OFF,
            degrade: DegradeDraw::default(),
        }
    }

    /// Compact one-line text form.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("recipe serializes")
    }

    pub fn from_record(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Standard deviation of the 50 ms window energies in dB and whether it
/// reaches the nonstationarity threshold.
pub fn nonstationary_score(chunk: &AudioBuffer, cfg: &AugmentConfig) -> Result<(f64, bool)> {
    let win = (cfg.nonstationary_window_s * chunk.sample_rate as f64).round() as usize;
    if win == 0 || chunk.len() < 2 * win {
        return Err(Error::InsufficientSamples { needed: 2 * win.max(1), got: chunk.len() });
    }
    if chunk.energy() == 0.0 {
        return Ok((0.0, false));
    }
    // Floor at -200 dB mean power per sample so silent windows stay finite.
    let floor = 1e-20 * win as f64;
    let levels: Vec<f64> = chunk
        .samples
        .chunks_exact(win)
        .map(|w| 10.0 * crate::dsp::energy(w).max(floor).log10())
        .collect();
    let n = levels.len() as f64;
    let mean = levels.iter().sum::<f64>() / n;
    let std = (levels.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n).sqrt();
    Ok((std, std >= cfg.nonstationary_std_db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig, Window};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, len: usize, amp: f64) -> AudioBuffer {
        AudioBuffer::from_samples((0..len).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()).collect())
    }

    fn noise(len: usize, amp: f64, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::from_samples((0..len).map(|_| amp * rng.random_range(-1.0..1.0)).collect())
    }

    fn gain_db(y: &AudioBuffer, x: &AudioBuffer) -> f64 {
        let skip = y.len() / 2;
        let e = |b: &AudioBuffer| b.samples[skip..].iter().map(|v| v * v).sum::<f64>();
        10.0 * (e(y) / e(x)).log10()
    }

    #[test]
    fn flat_eq_is_identity() {
        let cfg = AugmentConfig { eq_gain_db: 0.0, ..AugmentConfig::default() };
        let x = noise(4000, 0.5, 1);
        let y = random_eq(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn low_shelf_boost() {
        let x = sine(100.0, 32000, 0.5);
        let flat = Band { freq_hz: 1000.0, gain_db: 0.0, q: 1.0 };
        let d = EqDraw { low_shelf: Band { freq_hz: 200.0, gain_db: 10.0, q: 0.0 }, high_shelf: flat, bells: [flat, flat] };
        let g = gain_db(&apply_eq(&x, &d, &AugmentConfig::default()).unwrap(), &x);
        assert!((g - 10.0).abs() <= 0.5, "{g}");
    }

    #[test]
    fn worst_case_eq_stays_finite() {
        let boost = |f: f64| Band { freq_hz: f, gain_db: 10.0, q: 0.5 };
        let d = EqDraw { low_shelf: boost(8000.0), high_shelf: boost(40.0), bells: [boost(1000.0), boost(1000.0)] };
        let x = AudioBuffer::from_samples((0..16000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect());
        let y = apply_eq(&x, &d, &AugmentConfig::default()).unwrap();
        assert!(y.samples.iter().all(|v| v.is_finite()));
    }

    fn peak_hz(x: &AudioBuffer) -> f64 {
        let cfg = StftConfig::new(4096, 1024, Window::SqrtHann).unwrap();
        let s = stft(x, &cfg).unwrap();
        let mut acc = vec![0.0; s.bins];
        for t in 0..s.frames {
            for f in 0..s.bins {
                acc[f] += s.at(t, f).norm_sqr();
            }
        }
        let k = (0..s.bins).max_by(|&a, &b| acc[a].total_cmp(&acc[b])).unwrap();
        k as f64 * 16000.0 / 4096.0
    }

    #[test]
    fn pitch_contract() {
        let x = sine(1000.0, 16000, 0.5);
        assert_eq!(apply_pitch(&x, 1.0).unwrap(), x);
        for r in [0.9, 0.95, 1.1] {
            let y = apply_pitch(&x, r).unwrap();
            assert_eq!(y.len(), x.len());
            assert!((peak_hz(&y) - 1000.0 / r).abs() < 8.0, "{r}: {}", peak_hz(&y));
        }
    }

    #[test]
    fn degrade_examples() {
        let x = sine(50.0, 16000, 1.0);
        assert_eq!(apply_degrade(&x, &DegradeDraw { clip: Some(1.0), empty_s: None }), x);
        let c = apply_degrade(&x, &DegradeDraw { clip: Some(0.5), empty_s: None });
        assert!((c.peak() - 0.5).abs() < 1e-12);
        let e = apply_degrade(&x, &DegradeDraw { clip: None, empty_s: Some(0.5) });
        assert!(e.samples[..8000].iter().all(|v| *v == 0.0));
        assert_eq!(&e.samples[8000..], &x.samples[8000..]);
    }

    #[test]
    fn level_contract() {
        let cfg = AugmentConfig::default();
        let fg = sine(300.0, 8000, 10f64.powf(-50.0 / 20.0) * 2f64.sqrt());
        let bg = noise(8000, 0.3, 3);
        let quiet = apply_level_and_mix(&fg, &bg, &LevelDraw::UNITY, &cfg).unwrap();
        assert!(quiet.skip);
        let fg = noise(8000, 0.05, 4);
        for seed in 0..20 {
            let m = level_and_mix(&fg, &bg, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(!m.skip);
            let (a, b) = m.normalized_dbfs;
            if a.is_finite() {
                assert!((a + 20.0).abs() < 1e-6);
            }
            assert!((b + 20.0).abs() < 1e-6);
            for i in 0..m.mix.len() {
                assert!((m.mix.samples[i] - m.fg.samples[i] - m.bg.samples[i]).abs() < 1e-9);
            }
        }
        let z = AudioBuffer::zeros(8000, 16000);
        let d = LevelDraw { silence_fg: true, ..LevelDraw::UNITY };
        assert!(apply_level_and_mix(&z, &z, &d, &cfg).unwrap().skip);
        let m = apply_level_and_mix(&z, &bg, &d, &cfg).unwrap();
        assert!(!m.skip && m.fg.energy() == 0.0);
    }

    #[test]
    fn band_limit_examples() {
        let x = sine(6000.0, 16000, 0.5);
        let (y, _) = apply_band_limit(&x, &x, &BandLimitDraw { target: BandTarget::Foreground, cutoff_hz: 4000.0 }, 8).unwrap();
        assert!(gain_db(&y, &x) <= -40.0);
        let x = sine(1000.0, 16000, 0.5);
        let (_, y) = apply_band_limit(&x, &x, &BandLimitDraw { target: BandTarget::Background, cutoff_hz: 7000.0 }, 8).unwrap();
        assert!(gain_db(&y, &x).abs() <= 0.5);
        let (a, b) = apply_band_limit(&x, &x, &BandLimitDraw::OFF, 8).unwrap();
        assert_eq!((a, b), (x.clone(), x));
    }

    #[test]
    fn nonstationary_examples() {
        let cfg = AugmentConfig::default();
        let (s, f) = nonstationary_score(&noise(16000, 0.3, 5), &cfg).unwrap();
        assert!(s < 1.0 && !f);
        let mut b = noise(16000, 0.01, 6);
        b.samples[4000..5600].iter_mut().for_each(|v| *v *= 10.0);
        assert!(nonstationary_score(&b, &cfg).unwrap().1);
        assert_eq!(nonstationary_score(&AudioBuffer::zeros(16000, 16000), &cfg).unwrap(), (0.0, false));
        assert!(nonstationary_score(&AudioBuffer::zeros(1000, 16000), &cfg).is_err());
    }

    #[test]
    fn recipe_round_trip_and_keying() {
        let cfg = AugmentConfig::default();
        let r = AugmentRecipe::sample(&cfg, 42);
        assert_eq!(AugmentRecipe::from_record(&r.to_record()).unwrap(), r);
        let id = AugmentRecipe::identity();
        assert_eq!(AugmentRecipe::from_record(&id.to_record()).unwrap(), id);
        assert_eq!(AugmentRecipe::sample(&cfg, 42), r);
        let other = AugmentConfig { clip_prob: 0.9, ..cfg.clone() };
        let r2 = AugmentRecipe::sample(&other, 42);
        assert_eq!((r2.fg_eq, r2.level, r2.band, r2.reverb), (r.fg_eq, r.level, r.band, r.reverb));
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig::neutral().validate().is_ok());
        assert!(AugmentConfig { bell_q: [1.5, 0.5], ..AugmentConfig::default() }.validate().is_err());
        assert!(AugmentConfig { clip_prob: 1.5, ..AugmentConfig::default() }.validate().is_err());
    }
}
