//! Tab-separated clip lists: `path  duration_s  tags  split`, one clip per line.
//!
//! Tags are comma separated (`-` for none). Relative paths resolve against
//! the manifest's directory. Lines starting with `#` are comments.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub duration_s: f64,
    pub tags: BTreeSet<String>,
    pub split: Split,
}

impl ManifestRecord {
    pub fn new(path: impl Into<PathBuf>, duration_s: f64, tags: &[&str], split: Split) -> Self {
        Self { path: path.into(), duration_s, tags: tags.iter().map(|t| t.to_string()).collect(), split }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Manifest(format!("line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(&format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let duration_s: f64 = fields[1].parse().map_err(|_| bad("bad duration"))?;
            if !(duration_s > 0.0 && duration_s.is_finite()) {
                return Err(bad("duration must be positive"));
            }
            let tags = if fields[2] == "-" {
                BTreeSet::new()
            } else {
                fields[2].split(',').filter(|t| !t.is_empty()).map(str::to_string).collect()
            };
            let rel = PathBuf::from(fields[0]);
            let path = if rel.is_absolute() { rel } else { base.join(rel) };
            records.push(ManifestRecord { path, duration_s, tags, split: fields[3].parse().map_err(|e: Error| bad(&e.to_string()))? });
        }
        Ok(Self { records })
    }

    /// Reads a manifest and checks that every listed file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        if let Some(r) = m.records.iter().find(|r| !r.path.is_file()) {
            return Err(Error::Manifest(format!("missing file {}", r.path.display())));
        }
        Ok(m)
    }

    /// Text form; paths under `base` are written relative to it.
    pub fn to_text(&self, base: &Path) -> String {
        let mut s = String::from("# path\tduration_s\ttags\tsplit\n");
        for r in &self.records {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            let tags = if r.tags.is_empty() { "-".to_string() } else { r.tags.iter().cloned().collect::<Vec<_>>().join(",") };
            s.push_str(&format!("{}\t{}\t{}\t{}\n", p.display(), r.duration_s, tags, r.split));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text(path.parent().unwrap_or(Path::new("."))))?;
        Ok(())
    }

    /// Records carrying at least one `include` tag (or any, if `include` is
    /// empty) and none of the `exclude` tags.
    pub fn filter_tags(&self, include: &[String], exclude: &[String]) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| include.is_empty() || include.iter().any(|t| r.tags.contains(t)))
                .filter(|r| !exclude.iter().any(|t| r.tags.contains(t)))
                .cloned()
                .collect(),
        }
    }

    pub fn split(&self, split: Split) -> Self {
        Self { records: self.records.iter().filter(|r| r.split == split).cloned().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.wav"), b"x").unwrap();
        let m = Manifest::new(vec![ManifestRecord::new(dir.path().join("a.wav"), 1.5, &["speech", "male"], Split::Val)]);
        let p = dir.path().join("m.tsv");
        m.save(&p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().contains("a.wav\t1.5\tmale,speech\tval"));
        assert_eq!(Manifest::load(&p).unwrap(), m);
    }

    #[test]
    fn load_rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "missing.wav\t1\t-\ttrain\n").unwrap();
        assert!(matches!(Manifest::load(&p), Err(Error::Manifest(_))));
        assert!(Manifest::parse("a\t0\t-\ttrain", Path::new(".")).is_err());
        assert!(Manifest::parse("a\t1\t-\tdev", Path::new(".")).is_err());
        assert!(Manifest::parse("a\t1\t-", Path::new(".")).is_err());
    }

    #[test]
    fn tag_filtering() {
        let m = Manifest::new(vec![
            ManifestRecord::new("a", 1.0, &["music"], Split::Train),
            ManifestRecord::new("b", 1.0, &["noise", "speech"], Split::Train),
            ManifestRecord::new("c", 1.0, &["noise"], Split::Test),
        ]);
        let f = m.filter_tags(&["noise".into()], &["speech".into()]);
        assert_eq!(f.records.len(), 1);
        assert_eq!(f.records[0].path, PathBuf::from("c"));
        assert_eq!(m.filter_tags(&[], &[]).len(), 3);
        assert_eq!(m.split(Split::Test).len(), 1);
    }
}
