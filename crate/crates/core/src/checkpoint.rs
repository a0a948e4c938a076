//! Binary container for named `f64` tensors (model weights and masks).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FMPR"            4 bytes magic
//! version: u32      currently 1
//! repeated until end of file:
//!   name_len: u32
//!   name: name_len bytes of UTF-8
//!   rank: u32
//!   dims: rank x u32
//!   payload: product(dims) x f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FMPR";
pub const VERSION: u32 = 1;

pub fn encode(params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
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

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Decodes a container; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Params> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4, "magic")? != MAGIC {
        cur.pos = 0;
        return Err(cur.err("bad magic, expected FMPR"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        cur.pos -= 4;
        return Err(cur.err(format!("unsupported version {version}")));
    }
    let mut params = Params::default();
    while cur.pos < bytes.len() {
        let start = cur.pos;
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset: start as u64 + 4,
                msg: "name is not UTF-8".into(),
            })?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dimension")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c > 0 && rank > 0)
            .ok_or_else(|| cur.err(format!("invalid dimensions {dims:?} for {name}")))?;
        let payload = cur.take(
            count.checked_mul(8).ok_or_else(|| cur.err("payload too large"))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.insert(name.clone(), Tensor::new(dims, data)?).is_some() {
            cur.pos = start;
            return Err(cur.err(format!("duplicate tensor {name}")));
        }
    }
    Ok(params)
}

pub fn save(path: &Path, params: &Params) -> Result<()> {
    crate::io::write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<Params> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
