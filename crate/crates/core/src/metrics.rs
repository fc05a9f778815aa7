//! Objective quality metrics and evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::{stft, AudioBuffer, StftConfig};
use crate::error::{Error, Result};

/// Metrics in dB are capped to this magnitude.
pub const DB_CAP: f64 = 100.0;
pub const LSD_EPS: f64 = 1e-8;

fn cap(db: f64) -> f64 {
    if db.is_nan() {
        return db;
    }
    db.clamp(-DB_CAP, DB_CAP)
}

/// `10 log10(num / den)`, capped; a zero denominator reads as the upper cap.
pub fn db_ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return DB_CAP;
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    cap(10.0 * (num / den).log10())
}

fn check_len(a: &AudioBuffer, b: &AudioBuffer) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn si_sdr_db(est: &AudioBuffer, reference: &AudioBuffer) -> Result<f64> {
    check_len(est, reference)?;
    let rr = reference.energy();
    if rr == 0.0 {
        return Err(Error::SilentSignal);
    }
    let dot: f64 = est.samples.iter().zip(&reference.samples).map(|(e, r)| e * r).sum();
    let alpha = dot / rr;
    let target = alpha * alpha * rr;
    let resid: f64 = est
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(e, r)| (e - alpha * r).powi(2))
        .sum();
    Ok(db_ratio(target, resid))
}

/// SNR of `est` against `reference`, with `est - reference` as the noise.
pub fn snr_db(est: &AudioBuffer, reference: &AudioBuffer) -> Result<f64> {
    check_len(est, reference)?;
    let rr = reference.energy();
    if rr == 0.0 {
        return Err(Error::SilentSignal);
    }
    let err: f64 = est.samples.iter().zip(&reference.samples).map(|(e, r)| (e - r).powi(2)).sum();
    Ok(db_ratio(rr, err))
}

pub fn log_spectral_distance(est: &AudioBuffer, reference: &AudioBuffer, cfg: &StftConfig) -> Result<f64> {
    check_len(est, reference)?;
    let a = stft(est, cfg)?;
    let b = stft(reference, cfg)?;
    let mut total = 0.0;
    for t in 0..a.frames {
        let mut frame = 0.0;
        for f in 0..a.bins {
            let d = 20.0 * ((a.at(t, f).norm() + LSD_EPS) / (b.at(t, f).norm() + LSD_EPS)).log10();
            frame += d * d;
        }
        total += frame / a.bins as f64;
    }
    Ok((total / a.frames as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScores {
    pub name: String,
    pub si_sdr_db: f64,
    pub snr_db: f64,
    pub lsd_db: f64,
    /// SI-SDR of the unprocessed input, when known.
    pub input_si_sdr_db: Option<f64>,
}

impl FileScores {
    pub fn compute(name: &str, est: &AudioBuffer, reference: &AudioBuffer, input: Option<&AudioBuffer>, cfg: &StftConfig) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            si_sdr_db: si_sdr_db(est, reference)?,
            snr_db: snr_db(est, reference)?,
            lsd_db: log_spectral_distance(est, reference, cfg)?,
            input_si_sdr_db: input.map(|x| si_sdr_db(x, reference)).transpose()?,
        })
    }

    pub fn si_sdr_improvement(&self) -> Option<f64> {
        self.input_si_sdr_db.map(|i| self.si_sdr_db - i)
    }
}

/// Mean with a normal-approximation 95% interval half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, ci95: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub files: Vec<FileScores>,
}

impl EvalReport {
    pub fn si_sdr(&self) -> Aggregate {
        Aggregate::of(&self.files.iter().map(|f| f.si_sdr_db).collect::<Vec<_>>())
    }

    pub fn snr(&self) -> Aggregate {
        Aggregate::of(&self.files.iter().map(|f| f.snr_db).collect::<Vec<_>>())
    }

    pub fn lsd(&self) -> Aggregate {
        Aggregate::of(&self.files.iter().map(|f| f.lsd_db).collect::<Vec<_>>())
    }

    pub fn si_sdr_improvement(&self) -> Aggregate {
        Aggregate::of(&self.files.iter().filter_map(|f| f.si_sdr_improvement()).collect::<Vec<_>>())
    }

    /// Tab-separated rows with a header, followed by `#`-prefixed aggregates.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("file\tsi_sdr_db\tsnr_db\tlsd_db\tinput_si_sdr_db\n");
        for f in &self.files {
            let input = f.input_si_sdr_db.map_or("-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}\t{}", f.name, f.si_sdr_db, f.snr_db, f.lsd_db, input);
        }
        let mut agg = vec![("si_sdr_db", self.si_sdr()), ("snr_db", self.snr()), ("lsd_db", self.lsd())];
        if self.files.iter().any(|f| f.input_si_sdr_db.is_some()) {
            agg.push(("si_sdr_improvement_db", self.si_sdr_improvement()));
        }
        for (name, a) in agg {
            let _ = writeln!(s, "# mean {name}\t{:.6}\t+-{:.6}\tn={}", a.mean, a.ci95, a.n);
        }
        s
    }
}
