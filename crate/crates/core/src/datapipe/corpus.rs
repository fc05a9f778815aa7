//! Synthetic desk corpora: speech-like and tonal foregrounds, assorted
//! noises, and a filter-test corpus with known DRR and SNR per clip.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::filter::{drr_db, sidecar_path, snr_db, FilterThresholds, SIDECAR_NOISE, SIDECAR_REVERB, SIDECAR_SPEECH};
use super::manifest::{Manifest, ManifestRecord, Split};
use crate::dsp::wav::{quantize_f32, write_wav};
use crate::dsp::{convolve_truncated, normalize_rms, AudioBuffer};
use crate::error::{Error, Result};
use crate::rng::indexed_stream;

fn gauss(rng: &mut impl Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Voiced, syllabic harmonic signal with moving formants and a little breath noise.
pub fn speech_like(len: usize, fs: u32, rng: &mut impl Rng) -> AudioBuffer {
    let fs_f = fs as f64;
    let f0_base = rng.random_range(90.0..240.0);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_depth = rng.random_range(0.01..0.05);
    let mut env = vec![0.0; len];
    let mut formants = vec![[0.0f64; 3]; len];
    let mut pos = (rng.random_range(0.0..0.1) * fs_f) as usize;
    while pos < len {
        let syl = (rng.random_range(0.12..0.30) * fs_f) as usize;
        let gap = (rng.random_range(0.03..0.15) * fs_f) as usize;
        let amp = rng.random_range(0.5..1.0);
        let f_start = [rng.random_range(300.0..900.0), rng.random_range(900.0..2300.0), rng.random_range(2400.0..3400.0)];
        let f_end = [rng.random_range(300.0..900.0), rng.random_range(900.0..2300.0), rng.random_range(2400.0..3400.0)];
        for i in 0..syl.min(len - pos) {
            let u = i as f64 / syl as f64;
            env[pos + i] = amp * (PI * u).sin().powf(0.7);
            for k in 0..3 {
                formants[pos + i][k] = f_start[k] + (f_end[k] - f_start[k]) * u;
            }
        }
        pos += syl + gap;
    }
    let max_h = ((0.45 * fs_f) / f0_base) as usize;
    let mut phases: Vec<f64> = (0..max_h).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut drift = 0.0;
    let mut out = vec![0.0; len];
    for i in 0..len {
        if env[i] == 0.0 {
            for (k, p) in phases.iter_mut().enumerate() {
                *p += 2.0 * PI * f0_base * (k + 1) as f64 / fs_f;
            }
            continue;
        }
        drift = 0.9995 * drift + 0.0005 * gauss(rng);
        let t = i as f64 / fs_f;
        let f0 = f0_base * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin() + 0.5 * drift);
        let mut v = 0.0;
        for (k, p) in phases.iter_mut().enumerate() {
            let fk = f0 * (k + 1) as f64;
            *p += 2.0 * PI * fk / fs_f;
            if fk >= 0.45 * fs_f {
                continue;
            }
            let gain: f64 = formants[i]
                .iter()
                .enumerate()
                .map(|(j, &fc)| {
                    let bw = 80.0 + 60.0 * j as f64;
                    (-(fk - fc).powi(2) / (2.0 * bw * bw)).exp() / (1.0 + j as f64)
                })
                .sum::<f64>()
                + 0.02 / (k + 1) as f64;
            v += gain * p.sin();
        }
        out[i] = env[i] * (v + 0.01 * gauss(rng));
    }
    AudioBuffer { samples: out, sample_rate: fs }
}

/// One to three steady or gliding sinusoids, with occasional gaps.
pub fn tones(len: usize, fs: u32, rng: &mut impl Rng) -> AudioBuffer {
    let fs_f = fs as f64;
    let n = rng.random_range(1..=3);
    let mut out = vec![0.0; len];
    for _ in 0..n {
        let f_a: f64 = rng.random_range(150.0..3000.0);
        let f_b = f_a * rng.random_range(0.8..1.25);
        let amp = rng.random_range(0.3..1.0);
        let on = rng.random_range(0.0..0.3) * len as f64;
        let off = len as f64 - rng.random_range(0.0..0.3) * len as f64;
        let mut ph = rng.random_range(0.0..2.0 * PI);
        for (i, o) in out.iter_mut().enumerate() {
            let u = i as f64 / len as f64;
            ph += 2.0 * PI * (f_a + (f_b - f_a) * u) / fs_f;
            let fi = i as f64;
            if fi >= on && fi < off {
                let ramp = ((fi - on).min(off - fi) / (0.01 * fs_f)).min(1.0);
                *o += amp * ramp * ph.sin();
            }
        }
    }
    AudioBuffer { samples: out, sample_rate: fs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Hum,
    Bursts,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] =
        [NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown, NoiseKind::Hum, NoiseKind::Bursts, NoiseKind::Babble];

    pub fn tag(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::Hum => "hum",
            NoiseKind::Bursts => "bursts",
            NoiseKind::Babble => "babble",
        }
    }
}

pub fn noise(kind: NoiseKind, len: usize, fs: u32, rng: &mut impl Rng) -> AudioBuffer {
    let fs_f = fs as f64;
    let samples = match kind {
        NoiseKind::White => (0..len).map(|_| gauss(rng)).collect(),
        NoiseKind::Pink => {
            // Paul Kellet's filter
            let mut b = [0.0f64; 7];
            (0..len)
                .map(|_| {
                    let w = gauss(rng);
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let y = b.iter().sum::<f64>() + w * 0.5362;
                    b[6] = w * 0.115926;
                    y
                })
                .collect()
        }
        NoiseKind::Brown => {
            let mut y = 0.0;
            (0..len)
                .map(|_| {
                    y = 0.995 * y + 0.1 * gauss(rng);
                    y
                })
                .collect()
        }
        NoiseKind::Hum => {
            let f0 = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
            let amps: Vec<f64> = (1..=8).map(|k| rng.random_range(0.1..1.0) / k as f64).collect();
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs_f;
                    amps.iter().enumerate().map(|(k, a)| a * (2.0 * PI * f0 * (k + 1) as f64 * t).sin()).sum::<f64>()
                        + 0.05 * gauss(rng)
                })
                .collect()
        }
        NoiseKind::Bursts => {
            let mut x = vec![0.0; len];
            let mut pos = (rng.random_range(0.0..0.3) * fs_f) as usize;
            while pos < len {
                let dur = (rng.random_range(0.03..0.2) * fs_f) as usize;
                let amp = rng.random_range(0.3..1.0);
                for v in x.iter_mut().skip(pos).take(dur) {
                    *v = amp * gauss(rng);
                }
                pos += dur + (rng.random_range(0.1..0.5) * fs_f) as usize;
            }
            x.iter().map(|v| v + 0.001 * gauss(rng)).collect()
        }
        NoiseKind::Babble => {
            let mut x = vec![0.0; len];
            for _ in 0..rng.random_range(4..8) {
                let s = speech_like(len, fs, rng);
                for (o, v) in x.iter_mut().zip(&s.samples) {
                    *o += v;
                }
            }
            x
        }
    };
    AudioBuffer { samples, sample_rate: fs }
}

/// Speech-like or tonal foreground (3:1), normalized to -20 dBFS.
pub fn foreground(len: usize, fs: u32, rng: &mut impl Rng) -> Result<AudioBuffer> {
    let x = if rng.random_bool(0.75) { speech_like(len, fs, rng) } else { tones(len, fs, rng) };
    normalize_rms(&x, -20.0)
}

pub fn background(len: usize, fs: u32, rng: &mut impl Rng) -> Result<(AudioBuffer, NoiseKind)> {
    let kind = NoiseKind::ALL[rng.random_range(0..NoiseKind::ALL.len())];
    Ok((normalize_rms(&noise(kind, len, fs, rng), -20.0)?, kind))
}

/// Additive mixture at a given SNR: `(x, fg, bg)` with `x == fg + bg`.
pub fn mix_at_snr(fg: &AudioBuffer, bg: &AudioBuffer, snr_db: f64) -> Result<(AudioBuffer, AudioBuffer, AudioBuffer)> {
    let ef = fg.energy();
    let eb = bg.energy();
    if ef == 0.0 || eb == 0.0 {
        return Err(Error::SilentSignal);
    }
    let bg = bg.scaled((ef / (eb * 10f64.powf(snr_db / 10.0))).sqrt());
    Ok((fg.add(&bg)?, fg.clone(), bg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    /// Speech-like and tonal foregrounds.
    Conversational,
    Noise,
}

/// Writes `count` clips of `duration_s` plus `manifest.tsv` into `dir`.
/// Every tenth clip goes to `val`, the one after it to `test`.
pub fn make_corpus(dir: &Path, kind: CorpusKind, count: usize, duration_s: f64, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let fs_hz = crate::dsp::SAMPLE_RATE;
    let len = (duration_s * fs_hz as f64).round() as usize;
    if len == 0 {
        return Err(Error::InvalidArgument("corpus clips must be longer than zero".into()));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = indexed_stream(seed, "corpus", i as u64);
        let (x, tag) = match kind {
            CorpusKind::Conversational => {
                if rng.random_bool(0.75) {
                    (speech_like(len, fs_hz, &mut rng), "speech")
                } else {
                    (tones(len, fs_hz, &mut rng), "tones")
                }
            }
            CorpusKind::Noise => {
                let k = NoiseKind::ALL[i % NoiseKind::ALL.len()];
                (noise(k, len, fs_hz, &mut rng), k.tag())
            }
        };
        let x = normalize_rms(&x, -20.0)?;
        let path = dir.join(format!("clip_{i:05}.wav"));
        write_wav(&path, &x)?;
        let split = match i % 10 {
            8 => Split::Val,
            9 => Split::Test,
            _ => Split::Train,
        };
        let group = if kind == CorpusKind::Noise { "noise" } else { "foreground" };
        records.push(ManifestRecord::new(path, duration_s, &[group, tag], split));
    }
    let m = Manifest::new(records);
    m.save(dir.join("manifest.tsv"))?;
    Ok(m)
}

/// Construction values for one clip of the filter-test corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTruth {
    pub path: PathBuf,
    pub drr_db: f64,
    pub snr_db: f64,
    pub accept: bool,
}

/// Decaying-noise reverberation tail (direct path excluded).
fn reverb_tail(len: usize, fs: u32, rt60_s: f64, rng: &mut impl Rng) -> Vec<f64> {
    let delay = (0.002 * fs as f64) as usize;
    (0..len)
        .map(|i| {
            if i < delay {
                0.0
            } else {
                let t = i as f64 / fs as f64;
                gauss(rng) * (-6.907755 * t / rt60_s).exp()
            }
        })
        .collect()
}

/// The DRR/SNR targets: both thresholds hit exactly, 0.1 dB short, 0.1 dB
/// over, and spread well to either side.
fn design_points(count: usize, th: &FilterThresholds, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let drr_fixed = [th.drr_min_db, th.drr_min_db - 0.1, th.drr_min_db + 0.1];
    let snr_fixed = [th.snr_min_db, th.snr_min_db - 0.1, th.snr_min_db + 0.1];
    let mut pts = Vec::with_capacity(count);
    for &d in &drr_fixed {
        for &s in &snr_fixed {
            pts.push((d, s));
        }
    }
    while pts.len() < count {
        let d = th.drr_min_db + rng.random_range(-20.0..20.0);
        let s = th.snr_min_db + rng.random_range(-10.0..20.0);
        pts.push((d, s));
    }
    pts.truncate(count);
    pts
}

/// Writes a corpus whose direct/reverb/noise components are stored as
/// oracle sidecars. Each clip's DRR and SNR, measured exactly as the filter
/// measures them from the stored (f32) sidecars, lands on the designed side
/// of every threshold.
pub fn make_filter_corpus(dir: &Path, count: usize, seed: u64, th: &FilterThresholds) -> Result<(Manifest, Vec<FilterTruth>)> {
    fs::create_dir_all(dir)?;
    let fs_hz = crate::dsp::SAMPLE_RATE;
    let len = fs_hz as usize;
    let pts = design_points(count, th, &mut indexed_stream(seed, "filter-design", 0));
    let mut records = Vec::with_capacity(count);
    let mut truth = Vec::with_capacity(count);
    for (i, &(drr, snr)) in pts.iter().enumerate() {
        let mut rng = indexed_stream(seed, "filter-clip", i as u64);
        let s = quantize_f32(&normalize_rms(&speech_like(len, fs_hz, &mut rng), -20.0)?);
        let tail = reverb_tail(len / 2, fs_hz, rng.random_range(0.2..0.8), &mut rng);
        let r_raw = AudioBuffer { samples: convolve_truncated(&s.samples, &tail), sample_rate: fs_hz };
        let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
        let n_raw = noise(kind, len, fs_hz, &mut rng);

        let mut g_r = (s.energy() / (r_raw.energy() * 10f64.powf(drr / 10.0))).sqrt();
        let r = nudge(&mut g_r, &r_raw, drr >= th.drr_min_db, |r| drr_db(&s, r).map(|v| v >= th.drr_min_db))?;
        let speech = s.add(&r)?;
        let mut g_n = (speech.energy() / (n_raw.energy() * 10f64.powf(snr / 10.0))).sqrt();
        let n = nudge(&mut g_n, &n_raw, snr >= th.snr_min_db, |n| snr_db(&speech, n).map(|v| v >= th.snr_min_db))?;
        let x = quantize_f32(&speech.add(&n)?);

        let path = dir.join(format!("clip_{i:05}.wav"));
        write_wav(&path, &x)?;
        write_wav(sidecar_path(&path, SIDECAR_SPEECH), &s)?;
        write_wav(sidecar_path(&path, SIDECAR_REVERB), &r)?;
        write_wav(sidecar_path(&path, SIDECAR_NOISE), &n)?;
        records.push(ManifestRecord::new(path.clone(), 1.0, &["speech", kind.tag()], Split::Train));
        truth.push(FilterTruth { path, drr_db: drr, snr_db: snr, accept: drr >= th.drr_min_db && snr >= th.snr_min_db });
    }
    let m = Manifest::new(records);
    m.save(dir.join("manifest.tsv"))?;
    let mut t = String::from("path\tdrr_db\tsnr_db\taccept\n");
    for r in &truth {
        t.push_str(&format!("{}\t{}\t{}\t{}\n", r.path.display(), r.drr_db, r.snr_db, r.accept));
    }
    fs::write(dir.join("truth.tsv"), t)?;
    Ok((m, truth))
}

/// Scales `raw` by `gain` (quantized to f32) and adjusts the gain in tiny
/// steps until `holds` returns `want`. Increasing the gain moves `holds`
/// from true to false.
fn nudge(
    gain: &mut f64,
    raw: &AudioBuffer,
    want: bool,
    holds: impl Fn(&AudioBuffer) -> Result<bool>,
) -> Result<AudioBuffer> {
    for _ in 0..1000 {
        let y = quantize_f32(&raw.scaled(*gain));
        if holds(&y)? == want {
            return Ok(y);
        }
        *gain *= if want { 1.0 - 1e-6 } else { 1.0 + 1e-6 };
    }
    Err(Error::InvalidArgument("could not place a corpus clip on the designed side of a threshold".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{nonstationary_score, AugmentConfig};
    use crate::dsp::rms_dbfs;
    use crate::rng::stream;

    #[test]
    fn generators_are_finite_and_deterministic() {
        for kind in NoiseKind::ALL {
            let a = noise(kind, 4000, 16000, &mut stream(1, kind.tag()));
            let b = noise(kind, 4000, 16000, &mut stream(1, kind.tag()));
            assert_eq!(a, b);
            assert!(a.samples.iter().all(|v| v.is_finite()) && a.energy() > 0.0, "{kind:?}");
        }
        let s = speech_like(16000, 16000, &mut stream(2, "s"));
        assert!(s.energy() > 0.0 && s.samples.iter().all(|v| v.is_finite()));
        assert!(tones(16000, 16000, &mut stream(2, "t")).energy() > 0.0);
    }

    #[test]
    fn bursts_are_nonstationary_and_white_is_not() {
        let cfg = AugmentConfig::default();
        let b = noise(NoiseKind::Bursts, 16000, 16000, &mut stream(3, "b"));
        assert!(nonstationary_score(&b, &cfg).unwrap().1);
        let w = noise(NoiseKind::White, 16000, 16000, &mut stream(3, "w"));
        assert!(!nonstationary_score(&w, &cfg).unwrap().1);
    }

    #[test]
    fn snr_mixing() {
        let fg = foreground(8000, 16000, &mut stream(4, "f")).unwrap();
        let (bg, _) = background(8000, 16000, &mut stream(4, "b")).unwrap();
        assert!((rms_dbfs(&fg) + 20.0).abs() < 1e-9);
        let (x, f, n) = mix_at_snr(&fg, &bg, 5.0).unwrap();
        assert!((10.0 * (f.energy() / n.energy()).log10() - 5.0).abs() < 1e-9);
        assert_eq!(x, f.add(&n).unwrap());
    }

    #[test]
    fn corpus_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_corpus(dir.path(), CorpusKind::Noise, 12, 0.25, 9).unwrap();
        assert_eq!(m.len(), 12);
        let loaded = Manifest::load(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(m.split(Split::Val).len(), 1);
    }
}
