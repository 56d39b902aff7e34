//! `MTCK` model checkpoints.
//!
//! Layout (little-endian): magic `MTCK`, `u32` version, `u32` length of the
//! JSON model config followed by its bytes, `u32` tensor count, then per
//! tensor `u32` rank, `u32` dims, and `f32` values. Tensors appear in
//! parameter declaration order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::{ModelConfig, MultiTaskModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MTCK";
pub const VERSION: u32 = 1;

fn fmt_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "MTCK",
        reason: reason.into(),
    }
}

pub fn encode(model: &MultiTaskModel<f32>) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(model.config())?;
    let mut out = Vec::with_capacity(16 + cfg.len() + model.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let tensors = model.store().tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MultiTaskModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len, "config")?)?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(fmt_err(format!("tensor {i} has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fmt_err("tensor size overflow"))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| fmt_err("tensor size overflow"))?, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| fmt_err(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(fmt_err("trailing bytes after last tensor"));
    }
    let mut model = MultiTaskModel::build(&config, 0)?;
    model.store_mut().load(tensors)?;
    Ok(model)
}

pub fn save_checkpoint(model: &MultiTaskModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MultiTaskModel<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
