//! Binary checkpoints.
//!
//! Layout, little-endian: magic `MSFS`, u32 version, u32 entry count, then
//! per entry a u32-length-prefixed UTF-8 name, u32 rank, the u32 extents and
//! the raw f32 values. A trailer holds the u64 optimizer step, the u64 next
//! epoch, and the u32-length-prefixed training config.

use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MSFS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub adam: AdamState,
    /// Next epoch to run.
    pub epoch: u64,
    pub config: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

impl Checkpoint {
    fn entries(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut v = Vec::new();
        for (prefix, store) in [
            ("p:", &self.params),
            ("m:", &self.adam.m),
            ("v:", &self.adam.v),
        ] {
            v.extend(store.iter().map(|(k, t)| (format!("{prefix}{k}"), t)));
        }
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let entries = self.entries();
        put_u32(&mut out, entries.len() as u32);
        for (name, t) in entries {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 4);
            for d in t.shape().dims() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let cfg = self.config.to_toml();
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic; not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let count = r.u32()?;
        let (mut params, mut m, mut v) = (ParamStore::new(), ParamStore::new(), ParamStore::new());
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let shape = Shape::from_dims(&dims).map_err(|e| Error::Format(e.to_string()))?;
            let raw = r.take(
                shape
                    .numel()
                    .checked_mul(4)
                    .ok_or_else(|| Error::Format("entry too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data)?;
            let (store, key) = match name.split_at_checked(2) {
                Some(("p:", k)) => (&mut params, k),
                Some(("m:", k)) => (&mut m, k),
                Some(("v:", k)) => (&mut v, k),
                _ => return Err(Error::Format(format!("unknown entry `{name}`"))),
            };
            store.insert(key.to_string(), t);
        }
        let step = r.u64()?;
        let epoch = r.u64()?;
        let cfg_text = r.string()?;
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let config = TrainConfig::from_toml(&cfg_text).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Checkpoint {
            params,
            adam: AdamState { step, m, v },
            epoch,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
