//! Manifests, training-example synthesis and semi-supervised clip filtering.

pub mod corpus;
pub mod filter;
pub mod manifest;
pub mod sampler;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

pub use filter::{drr_db, filter_corpus, snr_db, Components, Estimator, FilterReport, FilterThresholds, ModelEstimator, OracleEstimator};
pub use manifest::{Manifest, ManifestRecord, Split};
pub use sampler::{ChunkRef, ChunkSampler};

use crate::augment::{apply_band_limit, apply_degrade, apply_eq, apply_level_and_mix, apply_pitch, AugmentConfig, AugmentRecipe};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::reverb::{augment_rir, reverberant_mix, DereverbMode, RirLibrary};
use crate::rng::indexed_stream;

/// One training datapoint; `x == label_fg + label_bg` up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: AudioBuffer,
    pub label_fg: AudioBuffer,
    pub label_bg: AudioBuffer,
    /// Component levels right after normalization, when the level stage ran.
    pub normalized_dbfs: Option<(f64, f64)>,
}

impl Example {
    pub fn new(x: AudioBuffer, label_fg: AudioBuffer, label_bg: AudioBuffer) -> Self {
        Self { x, label_fg, label_bg, normalized_dbfs: None }
    }
}

/// Runs the augmentation stack given by `recipe`:
/// EQ and pitch per component, reverberation, levels and mixing, band
/// limiting, then mixture degradation. The background label absorbs
/// whatever degradation changed. `None` means the level stage asked to skip
/// this datapoint.
pub fn synthesize_example(
    fg: &AudioBuffer,
    bg: &AudioBuffer,
    rirs: &RirLibrary,
    recipe: &AugmentRecipe,
    cfg: &AugmentConfig,
    mode: DereverbMode,
) -> Result<Option<Example>> {
    if fg.len() != bg.len() || fg.sample_rate != bg.sample_rate {
        return Err(Error::ShapeMismatch(format!("foreground {} vs background {} samples", fg.len(), bg.len())));
    }
    let fg1 = apply_pitch(&apply_eq(fg, &recipe.fg_eq, cfg)?, recipe.fg_pitch)?;
    let bg1 = apply_pitch(&apply_eq(bg, &recipe.bg_eq, cfg)?, recipe.bg_pitch)?;

    let (fg2, bg2) = match recipe.reverb.rir_index {
        None => (fg1, bg1),
        Some(idx) => {
            if rirs.is_empty() {
                return Err(Error::InvalidArgument("recipe asks for reverberation but the RIR library is empty".into()));
            }
            let base = &rirs.rirs[(idx % rirs.len() as u64) as usize];
            let h = if recipe.reverb.rir_resample == 1.0 && recipe.reverb.rir_decay_tau_s.is_infinite() {
                base.clone()
            } else {
                augment_rir(base, recipe.reverb.rir_resample, recipe.reverb.rir_decay_tau_s)?
            };
            let m = reverberant_mix(&fg1, &bg1, &h.truncated(fg1.len()), &recipe.reverb.mix, mode)?;
            (m.label_fg, m.label_bg)
        }
    };

    let (fg3, bg3, normalized_dbfs) = match &recipe.level {
        None => (fg2, bg2, None),
        Some(d) => {
            let lm = apply_level_and_mix(&fg2, &bg2, d, cfg)?;
            if lm.skip {
                return Ok(None);
            }
            (lm.fg, lm.bg, Some(lm.normalized_dbfs))
        }
    };
    let (fg4, bg4) = apply_band_limit(&fg3, &bg3, &recipe.band, cfg.bandlimit_order)?;
    let x = apply_degrade(&fg4.add(&bg4)?, &recipe.degrade);
    let label_bg = x.sub(&fg4)?;
    Ok(Some(Example { x, label_fg: fg4, label_bg, normalized_dbfs }))
}

/// Attempts per datapoint before a source gives up on skipped recipes.
pub const MAX_ATTEMPTS: u64 = 64;

/// Foreground and background clips held in memory, chunked and sampled.
#[derive(Debug, Clone)]
pub struct PipelineSource {
    pub fg: Vec<AudioBuffer>,
    pub bg: Vec<AudioBuffer>,
    pub bg_sampler: ChunkSampler,
    pub rirs: RirLibrary,
    pub cfg: AugmentConfig,
    pub mode: DereverbMode,
    pub chunk_len: usize,
}

impl PipelineSource {
    pub fn new(
        fg: Vec<AudioBuffer>,
        bg: Vec<AudioBuffer>,
        rirs: RirLibrary,
        cfg: AugmentConfig,
        mode: DereverbMode,
        chunk_len: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if fg.is_empty() {
            return Err(Error::InvalidArgument("no foreground clips".into()));
        }
        let bg_sampler = ChunkSampler::from_clips(&bg, chunk_len, &cfg)?;
        Ok(Self { fg, bg, bg_sampler, rirs, cfg, mode, chunk_len })
    }

    pub fn from_manifests(fg: &Manifest, bg: &Manifest, rirs: RirLibrary, cfg: AugmentConfig, mode: DereverbMode, chunk_len: usize) -> Result<Self> {
        let load = |m: &Manifest| m.records.iter().map(|r| read_wav(&r.path)).collect::<Result<Vec<_>>>();
        Self::new(load(fg)?, load(bg)?, rirs, cfg, mode, chunk_len)
    }

    /// Datapoint `index` under `seed`, with the recipe that produced it.
    pub fn example(&self, seed: u64, index: u64) -> Result<(Example, AugmentRecipe)> {
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = indexed_stream(seed, "example", index.wrapping_mul(MAX_ATTEMPTS).wrapping_add(attempt));
            let fi = rng.random_range(0..self.fg.len());
            let clip = &self.fg[fi];
            let off = if clip.len() > self.chunk_len { rng.random_range(0..=clip.len() - self.chunk_len) } else { 0 };
            let fg = sampler::chunk_of(clip, off, self.chunk_len);
            let (r, _) = self.bg_sampler.sample(&mut rng);
            let bg = sampler::chunk_of(&self.bg[r.clip], r.offset, self.chunk_len);
            let mut cfg = self.cfg.clone();
            if self.rirs.is_empty() {
                cfg.reverb_prob = 0.0;
            }
            let recipe = AugmentRecipe::sample(&cfg, rng.random());
            if let Some(ex) = synthesize_example(&fg, &bg, &self.rirs, &recipe, &cfg, self.mode)? {
                return Ok((ex, recipe));
            }
        }
        Err(Error::InvalidArgument(format!("datapoint {index}: every attempt was skipped by the level stage")))
    }
}

/// Writes `count` datapoints as `ex_NNNNN.{x,fg,bg}.wav` plus `recipes.jsonl`.
pub fn make_dataset(src: &PipelineSource, count: u64, seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut recipes = fs::File::create(dir.join("recipes.jsonl"))?;
    for i in 0..count {
        let (ex, recipe) = src.example(seed, i)?;
        for (kind, b) in [("x", &ex.x), ("fg", &ex.label_fg), ("bg", &ex.label_bg)] {
            write_wav(dir.join(format!("ex_{i:05}.{kind}.wav")), b)?;
        }
        writeln!(recipes, "{}", recipe.to_record())?;
    }
    Ok(())
}
