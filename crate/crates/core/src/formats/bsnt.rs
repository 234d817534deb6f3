//! "BSNT" tensor files.
//!
//! Layout (little-endian): magic `BSNT`, `u32` version (1), `u32` rank,
//! `u32` dims, then the `f32` payload in row-major order.
//!
//! A pack stores several named tensors: magic `BSNK`, `u32` version, `u32`
//! count, then per entry a `u32` name length, the UTF-8 name, a `u64` record
//! length and one BSNT record.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BSNT";
const PACK_MAGIC: &[u8; 4] = b"BSNK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidInput(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(TensorFile {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let u32_at = |o: usize| -> Result<u32> {
            bytes
                .get(o..o + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::format(path, "truncated BSNT header"))
        };
        if bytes.get(0..4) != Some(MAGIC.as_slice()) {
            return Err(Error::format(path, "missing BSNT magic"));
        }
        let version = u32_at(4)?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let rank = u32_at(8)? as usize;
        let dims = (0..rank)
            .map(|i| u32_at(12 + 4 * i).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let start = 12 + 4 * rank;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, "dimension overflow"))?;
        if bytes.len() != start + 4 * n {
            return Err(Error::format(
                path,
                format!("payload holds {} bytes, dims {dims:?} need {}", bytes.len() - start, 4 * n),
            ));
        }
        let data = bytes[start..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(TensorFile { dims, data })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn write_bsnt(path: &Path, t: &TensorFile) -> Result<()> {
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_bsnt(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes, path)
}

/// Writes named tensors in the given order.
pub fn write_pack(path: &Path, entries: &[(String, TensorFile)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(PACK_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rec = t.to_bytes();
        out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pack(path: &Path) -> Result<Vec<(String, TensorFile)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(path, "truncated tensor pack"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != PACK_MAGIC {
        return Err(Error::format(path, "missing BSNK magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let rec = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let t = TensorFile::from_bytes(take(rec)?, path)?;
        out.push((name, t));
    }
    Ok(out)
}
