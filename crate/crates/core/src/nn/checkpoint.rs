//! Flat binary parameter files: `LDMN`, a `u32` version, then for each
//! tensor its rank, dims and `f64` values, all little-endian.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LDMN";
const VERSION: u32 = 1;

pub fn encode(params: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for t in params {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Tensor>> {
    let fail = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let start = *pos;
        let slice = bytes
            .get(start..start + n)
            .ok_or_else(|| fail(start, format!("needed {n} bytes, file has {}", bytes.len() - start)))?;
        *pos += n;
        Ok(slice)
    };
    let u32_at =
        |pos: &mut usize| -> Result<u32> { Ok(u32::from_le_bytes(take(pos, 4)?.try_into().expect("4 bytes"))) };
    if take(&mut pos, 4)? != MAGIC {
        return Err(fail(0, "bad magic, expected \"LDMN\"".into()));
    }
    let version = u32_at(&mut pos)?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let mut tensors = Vec::new();
    while pos < bytes.len() {
        let rank = u32_at(&mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(&mut pos)? as usize);
        }
        let count: usize = shape.iter().product();
        let start = pos;
        let raw = take(&mut pos, count * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(fail(start, "non-finite parameter value".into()));
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(tensors)
}

pub fn save(path: &Path, params: &[Tensor]) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
