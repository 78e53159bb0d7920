//! Minimal named-tensor container used for model weights and prompts.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic    4 bytes  "ACVP"
//! version  u32      1
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), rank u32, dims u32 * rank,
//!          payload f32 * product(dims)
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ACVP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f32) -> Self {
        Self::new(name, vec![1], vec![v])
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

pub fn encode(entries: &[TensorEntry]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::DuplicateName(e.name.clone()));
        }
        if e.numel() != e.data.len() {
            return Err(Error::shape(
                format!("{} values for dims {:?}", e.numel(), e.dims),
                e.data.len(),
            ));
        }
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::TruncatedPayload(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<TensorEntry>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::TruncatedPayload("name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let rank = r.u32(&name)? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u32(&name)? as usize);
        }
        let numel: usize = dims.iter().product();
        let bytes = r.take(numel.checked_mul(4).ok_or_else(|| Error::TruncatedPayload(name.clone()))?, &name)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(TensorEntry { name, dims, data });
    }
    Ok(entries)
}

pub fn tensorfile_write(path: impl AsRef<Path>, entries: &[TensorEntry]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn tensorfile_read(path: impl AsRef<Path>) -> Result<Vec<TensorEntry>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Looks up an entry by name and checks its element count.
pub fn find<'a>(entries: &'a [TensorEntry], name: &str, numel: Option<usize>) -> Result<&'a TensorEntry> {
    let e = entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::MissingEntry(name.to_string()))?;
    if let Some(n) = numel {
        if e.data.len() != n {
            return Err(Error::shape(format!("{name}: {n} values"), e.data.len()));
        }
    }
    Ok(e)
}
