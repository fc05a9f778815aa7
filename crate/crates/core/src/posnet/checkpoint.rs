//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "PCNCKPT\0"
//! version  u32
//! config   u32 length + UTF-8 JSON NetConfig
//! step     u64
//! arrays   u32 count, then per array:
//!          u16 name length, name, u8 trainable, u8 dtype (0 = f32, 1 = f64),
//!          u8 rank, u32 dims[rank], payload
//! adam     u8 present; if 1: u64 step, then per array the first-moment and
//!          second-moment payloads as f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ModelParams, NetConfig, ParamArray};
use crate::error::{Error, Result};
use crate::trainer::OptimizerState;

const MAGIC: &[u8; 8] = b"PCNCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    /// Lossless; required for bit-exact resume.
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub step: u64,
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.arrays.len() as u32).to_le_bytes());
        for a in &self.params.arrays {
            let name = a.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(a.trainable as u8);
            out.push(match precision {
                Precision::F32 => 0,
                Precision::F64 => 1,
            });
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            write_payload(&mut out, &a.data, precision);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                if opt.m.len() != self.params.arrays.len() || opt.v.len() != self.params.arrays.len() {
                    return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
                }
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    write_payload(&mut out, m, Precision::F64);
                    write_payload(&mut out, v, Precision::F64);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let config: NetConfig = serde_json::from_slice(r.take(cfg_len)?)?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let trainable = r.u8()? != 0;
            let precision = match r.u8()? {
                0 => Precision::F32,
                1 => Precision::F64,
                d => return Err(Error::Checkpoint(format!("unknown dtype {d}"))),
            };
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            let data = r.payload(len, precision)?;
            arrays.push(ParamArray { name, shape, data, trainable });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for a in &arrays {
                    m.push(r.payload(a.data.len(), Precision::F64)?);
                    v.push(r.payload(a.data.len(), Precision::F64)?);
                }
                Some(OptimizerState { step, m, v })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { config, step, params: ModelParams { arrays }, optimizer })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes(precision)?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path.as_ref())?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn write_payload(out: &mut Vec<u8>, data: &[f64], precision: Precision) {
    match precision {
        Precision::F32 => data.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Precision::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn payload(&mut self, len: usize, precision: Precision) -> Result<Vec<f64>> {
        match precision {
            Precision::F32 => Ok(self
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()),
            Precision::F64 => Ok(self
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()),
        }
    }
}
