//! `MVOL` volume files.
//!
//! Layout (little-endian): magic `MVOL`, `u32` version, `u32` channels, three
//! `u32` dims, three `f32` spacings, a `u16`-prefixed UTF-8 unit label, then
//! `channels * m * n * p` `f32` voxels, channel-major with the last axis fastest.

use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVOL";
pub const VERSION: u32 = 1;
/// Upper bound on voxels per file (4 GiB of payload).
pub const MAX_VOXELS: u64 = 1 << 30;

fn fmt_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "MVOL",
        reason: reason.into(),
    }
}

pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let unit = v.unit().as_bytes();
    let unit_len = u16::try_from(unit.len()).map_err(|_| Error::InvalidArgument("unit label longer than 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(42 + unit.len() + v.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(v.channels() as u32).to_le_bytes());
    for d in v.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&unit_len.to_le_bytes());
    out.extend_from_slice(unit);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(format!(
                "truncated {section}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, section: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let channels = r.u32("channel count")?;
    let dims = [r.u32("dims")?, r.u32("dims")?, r.u32("dims")?];
    let total = dims
        .iter()
        .try_fold(channels as u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&t| t <= MAX_VOXELS)
        .ok_or_else(|| fmt_err(format!("dimension overflow: {channels} x {dims:?}")))?;
    let spacing = [r.f32("spacing")?, r.f32("spacing")?, r.f32("spacing")?];
    let unit_len = u16::from_le_bytes(r.take(2, "unit label")?.try_into().expect("2 bytes")) as usize;
    let unit = std::str::from_utf8(r.take(unit_len, "unit label")?)
        .map_err(|_| fmt_err("unit label is not UTF-8"))?
        .to_string();
    let raw = r.take(total as usize * 4, "voxel payload")?;
    if r.pos != bytes.len() {
        return Err(fmt_err(format!("{} trailing bytes after voxel payload", bytes.len() - r.pos)));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let dims = dims.map(|d| d as usize);
    Volume::with_meta(channels as usize, dims, spacing, unit, data).map_err(|e| fmt_err(e.to_string()))
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_volume(v)?).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}
