//! Binary checkpoint format.
//!
//! ```text
//! "LRLCKPT1"
//! repeated until EOF:
//!   u64 name_len | name bytes (UTF-8) | u64 rank | rank × u64 dim | prod(dims) × f64
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LRLCKPT1";

pub fn encode(records: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated {what} at offset {} (need {n} bytes, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing LRLCKPT1 magic".into()));
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let start = cur.pos;
        let name_len = cur.u64("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("record at offset {start}: name is not UTF-8")))?
            .to_string();
        let rank = cur.u64("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u64("dimension")? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = cur.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: absurd shape {shape:?}")))?,
            "tensor data",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let records: Vec<(&str, &Tensor)> = store.blocks().iter().map(|b| (b.name.as_str(), &b.tensor)).collect();
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(&records))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Overwrites every block of `store` with the same-named checkpoint record.
/// Missing, extra, or differently shaped records are errors.
pub fn load_into(store: &mut ParamStore, records: Vec<(String, Tensor)>) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            records.len(),
            store.len()
        )));
    }
    for (name, t) in records {
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
        let block = store.get_mut(id);
        if block.tensor.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                block.tensor.shape()
            )));
        }
        block.tensor = t;
    }
    Ok(())
}
