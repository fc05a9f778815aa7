use std::f64::consts::PI;

use super::EmbeddingConfig;
use crate::error::{Error, Result};

/// Frequency-positional embedding component `i` at normalized frequency
/// `pos = f / F` (0 at DC, 1 at the top of the band): `cos(2^i * pi * pos)`.
pub fn embedding_component(pos: f64, i: usize) -> f64 {
    (2f64.powi(i as i32) * PI * pos).cos()
}

/// Embeddings for `frames` frames, row-major `[frames][bins][k]`.
///
/// The band spans the bins, so bin 0 is DC and bin `bins - 1` is the top of
/// the band (`f = F`). Values depend on frequency only.
pub fn frequency_positional_embeddings(frames: usize, cfg: &EmbeddingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if frames == 0 {
        return Err(Error::InvalidArgument("need at least one frame".into()));
    }
    let band = (cfg.bins - 1) as f64;
    let row: Vec<f64> = (0..cfg.bins)
        .flat_map(|f| (0..cfg.k).map(move |i| embedding_component(f as f64 / band, i)))
        .collect();
    Ok(row.iter().cycle().take(frames * row.len()).copied().collect())
}
