//! TOML experiment configuration. Every section is optional and falls back
//! to the desk defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::datapipe::FilterThresholds;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::lossfn::LossWeights;
use crate::posnet::NetConfig;
use crate::reverb::{DereverbMode, LibraryConfig};
use crate::stream::StreamConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub fg_manifest: Option<PathBuf>,
    pub bg_manifest: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
    /// Training chunk length in samples.
    pub chunk_len: usize,
    pub dereverb: DereverbMode,
    /// Manifest tags a clip must carry (empty: any) or must not carry.
    pub include_tags: Vec<String>,
    pub exclude_tags: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            fg_manifest: None,
            bg_manifest: None,
            rir_dir: None,
            chunk_len: 16384,
            dereverb: DereverbMode::NoDereverb,
            include_tags: Vec::new(),
            exclude_tags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub stft: StftConfig,
    pub net: NetConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub reverb: LibraryConfig,
    pub filter: FilterThresholds,
    pub stream: StreamConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stft: StftConfig::default(),
            net: NetConfig::desk(),
            loss: LossWeights::default(),
            train: TrainConfig::desk(),
            augment: AugmentConfig::default(),
            reverb: LibraryConfig::default(),
            filter: FilterThresholds::default(),
            stream: StreamConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`; relative manifest and RIR paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.fg_manifest, &mut cfg.data.bg_manifest, &mut cfg.data.rir_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.stream.validate()?;
        if self.net.stft != self.stft || self.stream.stft != self.stft {
            return Err(Error::Config("net.stft and stream.stft must equal stft".into()));
        }
        if self.data.chunk_len == 0 {
            return Err(Error::Config("data.chunk_len must be positive".into()));
        }
        Ok(())
    }
}
