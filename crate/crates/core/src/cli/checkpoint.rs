//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//! `"SVLB"`, u32 version, u32 entry count, 32-byte config hash, then per
//! entry u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64), u8 ndim,
//! u32 dims, and the scalar payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Precision, Tensor};

pub const MAGIC: &[u8; 4] = b"SVLB";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub params: ParamSet,
}

pub fn encode(params: &ParamSet, config_hash: &[u8; 32]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(params.len()).map_err(|_| Error::Format("too many entries".into()))?.to_le_bytes());
    out.extend_from_slice(config_hash);
    let f32_mode = params.precision() == Precision::F32;
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(if f32_mode { DTYPE_F32 } else { DTYPE_F64 });
        let ndim = u8::try_from(t.ndim()).map_err(|_| Error::Format(format!("{name}: too many dimensions")))?;
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::Format(format!("{name}: dimension too large")))?.to_le_bytes());
        }
        for &v in t.data() {
            if f32_mode {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// All entries come back trainable.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let mut params = ParamSet::new();
    let mut precision = None;
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let p = match dtype {
            DTYPE_F32 => Precision::F32,
            DTYPE_F64 => Precision::F64,
            d => return Err(Error::Format(format!("{name}: unknown dtype code {d}"))),
        };
        if *precision.get_or_insert(p) != p {
            return Err(Error::Format("mixed dtypes in one checkpoint".into()));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match p {
            Precision::F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4"))))
                .collect(),
            Precision::F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                .collect(),
        };
        params.insert(name, Tensor::new(&shape, data)?, true)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last entry".into()));
    }
    params.set_precision(precision.unwrap_or(Precision::F64));
    Ok(Checkpoint { config_hash, params })
}

/// Writes via a temporary file so a failed save leaves nothing behind.
pub fn save(path: &Path, params: &ParamSet, config_hash: &[u8; 32]) -> Result<Vec<u8>> {
    let bytes = encode(params, config_hash)?;
    write_atomic(path, &bytes)?;
    Ok(bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads and checks the config hash unless `force` is set.
pub fn load(path: &Path, expected_hash: Option<&[u8; 32]>, force: bool) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck = decode(&bytes)?;
    if let Some(h) = expected_hash {
        if &ck.config_hash != h && !force {
            return Err(Error::Compatibility(format!(
                "{} was written for config {}, current config is {} (use --force to override)",
                path.display(),
                hex::encode(ck.config_hash),
                hex::encode(h)
            )));
        }
    }
    Ok(ck)
}
