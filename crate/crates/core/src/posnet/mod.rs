//! The enhancement network.
//!
//! A fully convolutional 2D U-Net over `(time, frequency)`. Each level runs a
//! DenseNet block of 3x3 conv + batch norm + ReLU layers; the deepest levels
//! add self-attention across time. Convolutions are causal in time, and the
//! only look-ahead comes from the 2x2 average pools. Inputs carry the real
//! and imaginary STFT parts plus cosine frequency-positional embeddings; the
//! outputs are the real and imaginary parts of one complex mask per target.

mod attention;
pub mod checkpoint;
mod embed;
pub mod layers;
mod net;
mod params;
pub mod tensor;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use attention::{attention_backward, attention_forward, AttentionCache, AttentionGrads, AttentionWeights};
pub use embed::{embedding_component, frequency_positional_embeddings};
pub use layers::FreqPadding;
pub use net::{BnObservation, ForwardCache, Mode, PosNet};
pub use params::{Gradients, ModelParams, ParamArray};
pub use tensor::Tensor;

use crate::dsp::{ComplexMask, Spectrogram, StftConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Number of cosine components.
    pub k: usize,
    /// Frequency bins; the band runs from bin 0 to bin `bins - 1`.
    pub bins: usize,
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("embedding needs k >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidArgument("embedding needs at least two bins".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub levels: usize,
    pub filters_per_level: Vec<usize>,
    pub dense_layers_per_block: usize,
    /// 2 = foreground + background; 3 adds a reverberation estimate.
    pub n_output_masks: usize,
    /// Encoder level indices with time attention; index `levels` is the bottleneck.
    pub attention_levels: BTreeSet<usize>,
    pub embedding_k: usize,
    pub positional_embeddings: bool,
    pub freq_padding: FreqPadding,
    pub stft: StftConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    /// Three levels with 8/16/32 filters: small enough to train on a CPU.
    pub fn desk() -> Self {
        Self {
            levels: 3,
            filters_per_level: vec![8, 16, 32],
            dense_layers_per_block: 4,
            n_output_masks: 2,
            attention_levels: [1, 2, 3].into_iter().collect(),
            embedding_k: 10,
            positional_embeddings: true,
            freq_padding: FreqPadding::Zero,
            stft: StftConfig::default(),
        }
    }

    /// Six levels with 32..256 filters.
    pub fn full() -> Self {
        Self {
            levels: 6,
            filters_per_level: vec![32, 64, 128, 256, 256, 256],
            attention_levels: [4, 5, 6].into_iter().collect(),
            ..Self::desk()
        }
    }

    pub fn input_channels(&self) -> usize {
        2 + if self.positional_embeddings { self.embedding_k } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.filters_per_level.len() != self.levels {
            return Err(Error::Config(format!(
                "{} levels but {} filter counts",
                self.levels,
                self.filters_per_level.len()
            )));
        }
        if self.filters_per_level.iter().any(|&f| f == 0) {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        if !(1..=3).contains(&self.n_output_masks) {
            return Err(Error::Config(format!("n_output_masks {} not in 1..=3", self.n_output_masks)));
        }
        if self.dense_layers_per_block == 0 {
            return Err(Error::Config("dense blocks need at least one layer".into()));
        }
        if let Some(&l) = self.attention_levels.iter().find(|&&l| l > self.levels) {
            return Err(Error::Config(format!("attention level {l} beyond bottleneck {}", self.levels)));
        }
        if self.positional_embeddings && self.embedding_k == 0 {
            return Err(Error::Config("embedding_k must be >= 1 when embeddings are on".into()));
        }
        self.stft.validate()
    }
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ModelParams> {
    Ok(PosNet::new(cfg)?.init_params(seed))
}

/// Single-spectrogram forward pass returning one mask per target.
pub fn unet_forward<'a>(
    net: &'a PosNet,
    spec: &Spectrogram,
    params: &'a ModelParams,
    mode: Mode,
) -> Result<(Vec<ComplexMask>, ForwardCache<'a>)> {
    let (mut masks, cache) = net.forward_spectrograms(params, &[spec], mode)?;
    Ok((masks.remove(0), cache))
}

/// Reverse pass for a cache produced by [`unet_forward`] or [`PosNet::forward`].
pub fn unet_backward(cache: &mut ForwardCache<'_>, output_cotangent: &Tensor) -> Result<(Gradients, Tensor)> {
    cache.backward(output_cotangent)
}

#[cfg(test)]
mod tests;
