//! A directory of first-tap-normalized RIRs (float32 WAV) plus `index.tsv`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{estimate_rt60, image_method_rir, normalize_first_tap, order_for, Rir, RoomSpec, TapInterp};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::rng::indexed_stream;

const INDEX: &str = "index.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub count: usize,
    pub length_s: f64,
    pub dimensions_m: [f64; 2],
    pub reflection_coeff: [f64; 2],
    /// Candidates at or above this RT60 are rejected.
    pub max_rt60_s: f64,
    pub order_cap: usize,
    /// Minimum distance from any wall for source and mic.
    pub wall_margin_m: f64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            count: 200,
            length_s: 1.0,
            dimensions_m: [2.0, 10.0],
            reflection_coeff: [0.5, 1.5],
            max_rt60_s: 0.8,
            order_cap: 60,
            wall_margin_m: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirEntry {
    pub file: String,
    pub seed: u64,
    pub rt60_s: Option<f64>,
    pub room: Option<RoomSpec>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RirLibrary {
    pub entries: Vec<RirEntry>,
    pub rirs: Vec<Rir>,
}

impl LibraryConfig {
    pub fn sample_room(&self, rng: &mut impl Rng) -> RoomSpec {
        let dims: [f64; 3] = std::array::from_fn(|_| rng.random_range(self.dimensions_m[0]..=self.dimensions_m[1]));
        let mut pos = || -> [f64; 3] {
            std::array::from_fn(|k| rng.random_range(self.wall_margin_m..dims[k] - self.wall_margin_m))
        };
        let source_pos_m = pos();
        let mic_pos_m = pos();
        let reflection_coeff = rng.random_range(self.reflection_coeff[0]..=self.reflection_coeff[1]);
        RoomSpec {
            dimensions_m: dims,
            source_pos_m,
            mic_pos_m,
            reflection_coeff,
            max_order: order_for(reflection_coeff, self.order_cap),
            interp: TapInterp::Floor,
        }
    }

    /// One candidate per attempt index; `None` when it fails the RT60 gate.
    pub fn candidate(&self, seed: u64, attempt: u64) -> Result<Option<(Rir, RoomSpec)>> {
        let mut rng = indexed_stream(seed, "rir-room", attempt);
        let room = self.sample_room(&mut rng);
        let raw = image_method_rir(&room, SAMPLE_RATE, self.length_s)?;
        let h = normalize_first_tap(&raw)?;
        Ok(match estimate_rt60(&h) {
            Ok(t) if t < self.max_rt60_s => Some((Rir { rt60_s: Some(t), ..h }, room)),
            _ => None,
        })
    }
}

impl RirLibrary {
    pub fn generate(cfg: &LibraryConfig, seed: u64) -> Result<Self> {
        let mut lib = Self::default();
        let mut attempt = 0u64;
        let max_attempts = 50 * cfg.count as u64 + 100;
        while lib.rirs.len() < cfg.count {
            if attempt >= max_attempts {
                return Err(Error::Config(format!("only {} of {} RIRs passed the RT60 gate", lib.rirs.len(), cfg.count)));
            }
            if let Some((h, room)) = cfg.candidate(seed, attempt)? {
                lib.entries.push(RirEntry {
                    file: format!("rir_{:05}.wav", lib.rirs.len()),
                    seed: attempt,
                    rt60_s: h.rt60_s,
                    room: Some(room),
                });
                lib.rirs.push(h);
            }
            attempt += 1;
        }
        Ok(lib)
    }

    pub fn len(&self) -> usize {
        self.rirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rirs.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut index = String::from("file\tseed\trt60_s\troom\n");
        for (e, h) in self.entries.iter().zip(&self.rirs) {
            write_wav(dir.join(&e.file), &h.taps)?;
            let rt = e.rt60_s.map_or("nan".to_string(), |t| t.to_string());
            let room = match &e.room {
                Some(r) => serde_json::to_string(r)?,
                None => "-".into(),
            };
            index.push_str(&format!("{}\t{}\t{}\t{}\n", e.file, e.seed, rt, room));
        }
        fs::write(dir.join(INDEX), index)?;
        Ok(())
    }

    /// Loads a saved library; taps are re-normalized after float32 storage.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(INDEX))?;
        let mut lib = Self::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(4, '\t').collect();
            if cols.len() != 4 {
                return Err(Error::Manifest(format!("{}:{}: expected 4 columns", INDEX, n + 1)));
            }
            let seed = cols[1].parse().map_err(|_| Error::Manifest(format!("bad seed on line {}", n + 1)))?;
            let rt60_s = cols[2].parse::<f64>().ok().filter(|t| t.is_finite());
            let room = if cols[3] == "-" { None } else { Some(serde_json::from_str(cols[3])?) };
            let h = normalize_first_tap(&Rir::from_taps(read_wav(dir.join(cols[0]))?)?)?;
            lib.rirs.push(Rir { rt60_s, ..h });
            lib.entries.push(RirEntry { file: cols[0].to_string(), seed, rt60_s, room });
        }
        Ok(lib)
    }

    /// Every `.wav` in `dir` (sorted by name), such as recorded responses.
    /// Responses at or above `max_rt60_s` are skipped.
    pub fn load_wav_dir(dir: impl AsRef<Path>, max_rt60_s: f64) -> Result<Self> {
        let mut files: Vec<_> = fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        let mut lib = Self::default();
        for p in files {
            let h = normalize_first_tap(&Rir::from_taps(read_wav(&p)?)?)?.with_rt60();
            if h.rt60_s.is_some_and(|t| t >= max_rt60_s) {
                continue;
            }
            lib.entries.push(RirEntry {
                file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                seed: 0,
                rt60_s: h.rt60_s,
                room: None,
            });
            lib.rirs.push(h);
        }
        Ok(lib)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LibraryConfig {
        LibraryConfig { count: 3, length_s: 0.5, order_cap: 20, ..LibraryConfig::default() }
    }

    #[test]
    fn generated_library_passes_gate() {
        let lib = RirLibrary::generate(&small(), 1).unwrap();
        assert_eq!(lib.len(), 3);
        for h in &lib.rirs {
            assert_eq!(h.taps.samples[0], 1.0);
            assert!(h.rt60_s.unwrap() < 0.8);
        }
        assert_eq!(RirLibrary::generate(&small(), 1).unwrap(), lib);
    }

    #[test]
    fn save_load_round_trip() {
        let lib = RirLibrary::generate(&small(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        lib.save(dir.path()).unwrap();
        let back = RirLibrary::load(dir.path()).unwrap();
        assert_eq!(back.entries, lib.entries);
        for (a, b) in back.rirs.iter().zip(&lib.rirs) {
            assert_eq!(a.taps.samples[0], 1.0);
            for (x, y) in a.taps.samples.iter().zip(&b.taps.samples) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let wavs = RirLibrary::load_wav_dir(dir.path(), 0.8).unwrap();
        assert_eq!(wavs.len(), 3);
    }
}
