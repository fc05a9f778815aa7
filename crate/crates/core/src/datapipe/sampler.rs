//! Chunk sampling with nonstationary chunks drawn more often.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::augment::{nonstationary_score, AugmentConfig};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkRef {
    pub clip: usize,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct ChunkSampler {
    pub chunks: Vec<ChunkRef>,
    pub flagged: Vec<bool>,
    pub chunk_len: usize,
    dist: WeightedIndex<f64>,
}

impl ChunkSampler {
    pub fn from_flags(chunks: Vec<ChunkRef>, flagged: Vec<bool>, chunk_len: usize, weight: f64) -> Result<Self> {
        if chunks.is_empty() {
            return Err(Error::InvalidArgument("no chunks to sample from".into()));
        }
        if chunks.len() != flagged.len() {
            return Err(Error::ShapeMismatch("one flag per chunk".into()));
        }
        let w: Vec<f64> = flagged.iter().map(|&f| if f { weight } else { 1.0 }).collect();
        let dist = WeightedIndex::new(&w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { chunks, flagged, chunk_len, dist })
    }

    /// Splits every clip into whole non-overlapping chunks (a clip shorter
    /// than one chunk contributes a single zero-padded chunk) and scores each.
    pub fn from_clips(clips: &[AudioBuffer], chunk_len: usize, cfg: &AugmentConfig) -> Result<Self> {
        if chunk_len == 0 {
            return Err(Error::InvalidArgument("chunk length must be positive".into()));
        }
        let mut chunks = Vec::new();
        let mut flagged = Vec::new();
        for (ci, clip) in clips.iter().enumerate() {
            let n = (clip.len() / chunk_len).max(1);
            for k in 0..n {
                let r = ChunkRef { clip: ci, offset: k * chunk_len };
                let (_, flag) = nonstationary_score(&chunk_of(clip, r.offset, chunk_len), cfg)?;
                chunks.push(r);
                flagged.push(flag);
            }
        }
        Self::from_flags(chunks, flagged, chunk_len, cfg.nonstationary_weight)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (ChunkRef, bool) {
        let i = self.dist.sample(rng);
        (self.chunks[i], self.flagged[i])
    }

    /// Endless deterministic draw sequence for `seed`.
    pub fn iter(&self, seed: u64) -> impl Iterator<Item = (ChunkRef, bool)> + '_ {
        let mut rng: StreamRng = stream(seed, "chunk-sampler");
        std::iter::repeat_with(move || self.sample(&mut rng))
    }
}

/// `len` samples from `offset`, zero-padded past the end.
pub fn chunk_of(clip: &AudioBuffer, offset: usize, len: usize) -> AudioBuffer {
    let mut s: Vec<f64> = clip.samples.iter().skip(offset).take(len).copied().collect();
    s.resize(len, 0.0);
    AudioBuffer { samples: s, sample_rate: clip.sample_rate }
}
