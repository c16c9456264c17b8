//! Binary checkpoints.
//!
//! ```text
//! magic  b"TFRMCKPT"
//! u32    version
//! u32    #config entries, then (str key, str value)*
//! u32    #params, then (str name, u64 rows, u64 cols, f64 × rows·cols)*
//! u8     optimizer present
//!        u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!        f64 m and v blocks in parameter order
//! ```
//!
//! Strings are u32 length + UTF-8 bytes; everything is little-endian.

use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use super::params::{Param, ParamStore};
use super::DiffError;

pub const MAGIC: &[u8; 8] = b"TFRMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub lr: f64,
    pub adam: AdamConfig,
    pub state: AdamState<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form `key = value` echo of the configuration that produced it.
    pub config: Vec<(String, String)>,
    pub params: ParamStore<f64>,
    pub optimizer: Option<OptimizerRecord>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut w, self.config.len());
        for (k, v) in &self.config {
            put_str(&mut w, k);
            put_str(&mut w, v);
        }
        put_u32(&mut w, self.params.len());
        for (name, p) in self.params.iter() {
            put_str(&mut w, name);
            w.extend_from_slice(&(p.rows as u64).to_le_bytes());
            w.extend_from_slice(&(p.cols as u64).to_le_bytes());
            put_f64s(&mut w, &p.data);
        }
        match &self.optimizer {
            None => w.push(0),
            Some(o) => {
                w.push(1);
                w.extend_from_slice(&o.state.step.to_le_bytes());
                for x in [o.lr, o.adam.beta1, o.adam.beta2, o.adam.eps] {
                    w.extend_from_slice(&x.to_le_bytes());
                }
                for block in o.state.m.iter().chain(&o.state.v) {
                    put_f64s(&mut w, block);
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DiffError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let n_cfg = r.u32()?;
        let mut config = Vec::with_capacity(n_cfg.min(1024) as usize);
        for _ in 0..n_cfg {
            config.push((r.string()?, r.string()?));
        }
        let n_params = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| bad("parameter shape overflows"))?;
            let data = r.f64s(n)?;
            params.insert(name, Param { rows, cols, data })?;
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let lr = r.f64()?;
                let adam = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let sizes: Vec<usize> = params.iter().map(|(_, p)| p.len()).collect();
                let m = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>, _>>()?;
                let v = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>, _>>()?;
                Some(OptimizerRecord { lr, adam, state: AdamState { step, m, v } })
            }
            other => return Err(bad(&format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { config, params, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiffError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| DiffError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiffError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DiffError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn bad(msg: &str) -> DiffError {
    DiffError::Checkpoint(msg.to_string())
}

fn put_u32(w: &mut Vec<u8>, n: usize) {
    w.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len());
    w.extend_from_slice(s.as_bytes());
}

fn put_f64s(w: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DiffError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DiffError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("block size overflows"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String, DiffError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid UTF-8 string"))
    }
}
