use serde::{Deserialize, Serialize};

use super::{Rir, SPEED_OF_SOUND};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

/// Reflection coefficient actually used for synthesis; larger values would diverge.
pub const MAX_REFLECTION: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapInterp {
    /// Each image lands on sample `floor(fs * d / c)`.
    #[default]
    Floor,
    /// Fractional delays spread over a Hann-windowed sinc of 33 taps.
    Sinc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions_m: [f64; 3],
    pub source_pos_m: [f64; 3],
    pub mic_pos_m: [f64; 3],
    /// As sampled (may exceed 1); clamped to [`MAX_REFLECTION`] for synthesis.
    pub reflection_coeff: f64,
    pub max_order: usize,
    #[serde(default)]
    pub interp: TapInterp,
}

impl RoomSpec {
    pub fn effective_reflection(&self) -> f64 {
        self.reflection_coeff.clamp(0.0, MAX_REFLECTION)
    }

    pub fn direct_distance(&self) -> f64 {
        dist(&self.source_pos_m, &self.mic_pos_m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions_m.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::DegenerateRoom(format!("dimensions {:?}", self.dimensions_m)));
        }
        for (name, p) in [("source", &self.source_pos_m), ("mic", &self.mic_pos_m)] {
            if p.iter().zip(&self.dimensions_m).any(|(x, d)| !(*x > 0.0 && x < d)) {
                return Err(Error::DegenerateRoom(format!("{name} {p:?} not strictly inside {:?}", self.dimensions_m)));
            }
        }
        if self.direct_distance() == 0.0 {
            return Err(Error::DegenerateRoom("source and mic coincide".into()));
        }
        if !(self.reflection_coeff >= 0.0) {
            return Err(Error::DegenerateRoom(format!("reflection coefficient {}", self.reflection_coeff)));
        }
        Ok(())
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

const SINC_HALF: isize = 16;

fn add_tap(taps: &mut [f64], delay: f64, amp: f64, interp: TapInterp) {
    match interp {
        TapInterp::Floor => {
            let i = delay.floor() as usize;
            if i < taps.len() {
                taps[i] += amp;
            }
        }
        TapInterp::Sinc => {
            let c = delay.round() as isize;
            for k in c - SINC_HALF..=c + SINC_HALF {
                if k < 0 || k as usize >= taps.len() {
                    continue;
                }
                let x = k as f64 - delay;
                let s = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
                let w = 0.5 + 0.5 * (std::f64::consts::PI * x / (SINC_HALF as f64 + 1.0)).cos();
                taps[k as usize] += amp * s * w;
            }
        }
    }
}

/// Image-source RIR: every image with at most `max_order` wall reflections
/// contributes `beta^order / d` at delay `fs * d / c`.
/// The result is raw (not first-tap normalized); `rt60_s` is left unset.
pub fn image_method_rir(room: &RoomSpec, fs: u32, length_s: f64) -> Result<Rir> {
    room.validate()?;
    let len = (fs as f64 * length_s).round() as usize;
    if len == 0 {
        return Err(Error::InvalidArgument("RIR length must be positive".into()));
    }
    let beta = room.effective_reflection();
    let l = room.dimensions_m;
    let s = room.source_pos_m;
    let m = room.mic_pos_m;
    let max_d = len as f64 / fs as f64 * SPEED_OF_SOUND + 1.0;
    let order = room.max_order as i64;
    let bound = |k: usize| -> i64 { ((max_d / (2.0 * l[k])).ceil() as i64 + 1).min(order + 1) };
    let (bx, by, bz) = (bound(0), bound(1), bound(2));
    let mut taps = vec![0.0; len];
    let scale = fs as f64 / SPEED_OF_SOUND;
    // Per-axis image coordinate offset and reflection count.
    let axis = |k: usize, n: i64, u: i64| -> (f64, i64) {
        let pos = (1 - 2 * u) as f64 * s[k] + 2.0 * n as f64 * l[k] - m[k];
        (pos, (n - u).abs() + n.abs())
    };
    for u in 0..2 {
        for nx in -bx..=bx {
            let (dx, ox) = axis(0, nx, u);
            if ox > order {
                continue;
            }
            for v in 0..2 {
                for ny in -by..=by {
                    let (dy, oy) = axis(1, ny, v);
                    if ox + oy > order {
                        continue;
                    }
                    for w in 0..2 {
                        for nz in -bz..=bz {
                            let (dz, oz) = axis(2, nz, w);
                            let o = ox + oy + oz;
                            if o > order {
                                continue;
                            }
                            let d = (dx * dx + dy * dy + dz * dz).sqrt();
                            let delay = d * scale;
                            if delay >= len as f64 + SINC_HALF as f64 {
                                continue;
                            }
                            add_tap(&mut taps, delay, beta.powi(o as i32) / d, room.interp);
                        }
                    }
                }
            }
        }
    }
    let first_tap_index = super::first_tap(&taps).ok_or(Error::EmptyRir)?;
    Ok(Rir { taps: AudioBuffer { samples: taps, sample_rate: fs }, first_tap_index, rt60_s: None })
}

/// Reflection order beyond which image contributions fall below -120 dB, capped.
pub fn order_for(reflection_coeff: f64, cap: usize) -> usize {
    let b = reflection_coeff.clamp(1e-6, MAX_REFLECTION);
    ((1e-6f64.ln() / b.ln()).ceil() as usize).clamp(1, cap)
}
