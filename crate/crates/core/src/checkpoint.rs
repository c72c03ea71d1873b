//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "VSCKPT01"
//! version   u32      currently 1
//! count     u32      number of tensor records
//! record*   name_len u32, name bytes (UTF-8), rank u32, extents u64 × rank,
//!           values f64 × product(extents)
//! checksum  32 bytes SHA-256 of every byte from `count` through the last record
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 8] = b"VSCKPT01";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            payload.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&payload);
    let mut out = Vec::with_capacity(12 + payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                "checkpoint",
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 8 + 4 + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::format("checkpoint", "missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let (payload, digest) = bytes[12..].split_at(bytes.len() - 12 - 32);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::format("checkpoint", "checksum mismatch"));
    }
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::format("checkpoint", format!("tensor name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("checkpoint", "extent overflow"))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.push(name, Tensor::new(shape, data)?);
    }
    if r.pos != payload.len() {
        return Err(Error::format("checkpoint", "trailing bytes after records"));
    }
    Ok(store)
}

pub fn save(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
        other => other,
    })
}
