//! Semi-supervised clip filtering: a DRR gate, then an SNR gate, each fed
//! by a component estimator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestRecord};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{AudioBuffer, StftConfig};
use crate::enhance::{enhance, MaskProvider};
use crate::error::{Error, Result};
use crate::metrics::db_ratio;

pub const SIDECAR_SPEECH: &str = "speech";
pub const SIDECAR_NOISE: &str = "noise";
pub const SIDECAR_REVERB: &str = "reverb";

/// `<dir>/<stem>.<kind>.wav` next to `clip`.
pub fn sidecar_path(clip: &Path, kind: &str) -> PathBuf {
    let stem = clip.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    clip.with_file_name(format!("{stem}.{kind}.wav"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub drr_min_db: f64,
    pub snr_min_db: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self { drr_min_db: 30.0, snr_min_db: 10.0 }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.drr_min_db.is_finite() && self.snr_min_db.is_finite()) {
            return Err(Error::Config("filter thresholds must be finite".into()));
        }
        Ok(())
    }
}

fn energy_ratio_db(num: &AudioBuffer, den: &AudioBuffer) -> Result<f64> {
    if num.len() != den.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} and {}", num.len(), den.len())));
    }
    let (a, b) = (num.energy(), den.energy());
    if a == 0.0 && b == 0.0 {
        return Err(Error::SilentSignal);
    }
    Ok(db_ratio(a, b))
}

/// Direct-to-reverberant energy ratio, capped at ±100 dB.
pub fn drr_db(direct: &AudioBuffer, reverb: &AudioBuffer) -> Result<f64> {
    energy_ratio_db(direct, reverb)
}

/// Speech-to-noise energy ratio, capped at ±100 dB.
pub fn snr_db(speech: &AudioBuffer, noise: &AudioBuffer) -> Result<f64> {
    energy_ratio_db(speech, noise)
}

/// Estimated parts of a clip. `speech` excludes `reverb` when a reverb
/// estimate exists; otherwise it is the reverberant speech.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub speech: AudioBuffer,
    pub noise: AudioBuffer,
    pub reverb: Option<AudioBuffer>,
}

impl Components {
    /// Speech including its reverberation.
    pub fn reverberant_speech(&self) -> Result<AudioBuffer> {
        match &self.reverb {
            Some(r) => self.speech.add(r),
            None => Ok(self.speech.clone()),
        }
    }
}

pub trait Estimator {
    fn has_reverb(&self) -> bool;
    fn estimate(&self, clip: &Path, x: &AudioBuffer) -> Result<Components>;
}

/// Reads the stored ground truth next to each clip.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEstimator;

impl Estimator for OracleEstimator {
    fn has_reverb(&self) -> bool {
        true
    }

    fn estimate(&self, clip: &Path, x: &AudioBuffer) -> Result<Components> {
        let load = |kind: &str| -> Result<AudioBuffer> {
            let p = sidecar_path(clip, kind);
            if !p.is_file() {
                return Err(Error::MissingGroundTruth(p));
            }
            let b = read_wav(&p)?;
            if b.len() != x.len() {
                return Err(Error::ShapeMismatch(format!("{} has {} samples, clip has {}", p.display(), b.len(), x.len())));
            }
            Ok(b)
        };
        Ok(Components { speech: load(SIDECAR_SPEECH)?, noise: load(SIDECAR_NOISE)?, reverb: Some(load(SIDECAR_REVERB)?) })
    }
}

/// Masks from a model: 0 = speech, 1 = noise, 2 = reverb (if present).
pub struct ModelEstimator<P: MaskProvider> {
    pub provider: P,
    pub stft: StftConfig,
}

impl<P: MaskProvider> ModelEstimator<P> {
    pub fn new(provider: P, stft: StftConfig) -> Result<Self> {
        match provider.n_masks() {
            2 | 3 => Ok(Self { provider, stft }),
            n => Err(Error::InvalidArgument(format!("estimator models need 2 or 3 masks, got {n}"))),
        }
    }
}

impl<P: MaskProvider> Estimator for ModelEstimator<P> {
    fn has_reverb(&self) -> bool {
        self.provider.n_masks() == 3
    }

    fn estimate(&self, _clip: &Path, x: &AudioBuffer) -> Result<Components> {
        let mut outs = enhance(x, &self.provider, &self.stft)?.into_iter();
        let speech = outs.next().expect("at least two masks");
        let noise = outs.next().expect("at least two masks");
        Ok(Components { speech, noise, reverb: outs.next() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Accept,
    RejectDrr,
    RejectSnr,
    Error(String),
}

impl Decision {
    pub fn label(&self) -> String {
        match self {
            Decision::Accept => "accept".into(),
            Decision::RejectDrr => "reject-drr".into(),
            Decision::RejectSnr => "reject-snr".into(),
            Decision::Error(e) => format!("error: {}", e.replace(['\t', '\n'], " ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub path: PathBuf,
    pub drr_db: Option<f64>,
    pub snr_db: Option<f64>,
    pub decision: Decision,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub clips: Vec<ClipReport>,
}

impl FilterReport {
    pub fn accepted(&self) -> usize {
        self.clips.iter().filter(|c| c.decision == Decision::Accept).count()
    }

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        let mut s = String::from("path\tdrr_db\tsnr_db\tdecision\toutput\n");
        for c in &self.clips {
            let out = c.output.as_ref().map_or("-".to_string(), |p| p.display().to_string());
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", c.path.display(), opt(c.drr_db), opt(c.snr_db), c.decision.label(), out);
        }
        s
    }
}

/// DRR and SNR gate on one clip; the SNR gate is skipped once DRR fails.
/// Returns the report row and, when accepted, the speech estimate.
pub fn gate_clip(
    path: &Path,
    x: &AudioBuffer,
    drr_est: &dyn Estimator,
    snr_est: &dyn Estimator,
    th: &FilterThresholds,
) -> Result<(ClipReport, Option<AudioBuffer>)> {
    let mut row = ClipReport { path: path.to_path_buf(), drr_db: None, snr_db: None, decision: Decision::RejectDrr, output: None };
    let c = drr_est.estimate(path, x)?;
    let reverb = c.reverb.as_ref().ok_or_else(|| Error::Config("DRR estimator returned no reverb estimate".into()))?;
    let drr = drr_db(&c.speech, reverb)?;
    row.drr_db = Some(drr);
    if drr < th.drr_min_db {
        return Ok((row, None));
    }
    let c2;
    let c = if std::ptr::addr_eq(drr_est, snr_est) {
        &c
    } else {
        c2 = snr_est.estimate(path, x)?;
        &c2
    };
    let speech = c.reverberant_speech()?;
    let snr = snr_db(&speech, &c.noise)?;
    row.snr_db = Some(snr);
    if snr < th.snr_min_db {
        row.decision = Decision::RejectSnr;
        return Ok((row, None));
    }
    row.decision = Decision::Accept;
    Ok((row, Some(speech)))
}

/// Runs both gates over a manifest. Accepted clips are written into
/// `out_dir` as the SNR estimator's speech estimate; the returned manifest
/// lists those files. Clips that fail to load or estimate are rejected with
/// the error in the report. `out_dir` also receives `report.tsv` and
/// `manifest.tsv`.
pub fn filter_corpus(
    manifest: &Manifest,
    drr_est: &dyn Estimator,
    snr_est: &dyn Estimator,
    th: &FilterThresholds,
    out_dir: &Path,
) -> Result<(Manifest, FilterReport)> {
    th.validate()?;
    if !drr_est.has_reverb() {
        return Err(Error::Config("the DRR gate needs an estimator with a reverb output".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut report = FilterReport::default();
    let mut accepted = Vec::new();
    for (i, rec) in manifest.records.iter().enumerate() {
        let result = read_wav(&rec.path).and_then(|x| gate_clip(&rec.path, &x, drr_est, snr_est, th));
        match result {
            Ok((mut row, speech)) => {
                if let Some(s) = speech {
                    let stem = rec.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    let out = out_dir.join(format!("{i:05}_{stem}.wav"));
                    write_wav(&out, &s)?;
                    accepted.push(ManifestRecord { path: out.clone(), ..rec.clone() });
                    row.output = Some(out);
                }
                report.clips.push(row);
            }
            Err(e) => report.clips.push(ClipReport {
                path: rec.path.clone(),
                drr_db: None,
                snr_db: None,
                decision: Decision::Error(e.to_string()),
                output: None,
            }),
        }
    }
    let m = Manifest::new(accepted);
    m.save(out_dir.join("manifest.tsv"))?;
    fs::write(out_dir.join("report.tsv"), report.to_tsv())?;
    Ok((m, report))
}
