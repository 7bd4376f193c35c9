//! Versioned binary container for model parameters.
//!
//! Layout (little-endian): magic `CFMODEL\0`, format version `u32`, kind
//! string, JSON metadata, then named tensors as `rows`, `cols` and raw `f64`
//! values. Writing the same model twice yields identical bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"CFMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<M: Serialize>(kind: &str, meta: &M, tensors: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_bytes(&mut out, kind.as_bytes());
    put_bytes(&mut out, &meta);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub struct Decoded<M> {
    pub meta: M,
    pub tensors: Vec<(String, Tensor)>,
}

impl<M> Decoded<M> {
    /// Take tensors in the expected order, checking names.
    pub fn take_in_order(self, names: &[&str]) -> Result<(M, Vec<Tensor>)> {
        if self.tensors.len() != names.len() {
            return Err(Error::ModelFile(format!(
                "expected {} tensors, found {}",
                names.len(),
                self.tensors.len()
            )));
        }
        let mut out = Vec::with_capacity(names.len());
        for ((name, t), want) in self.tensors.into_iter().zip(names) {
            if name != *want {
                return Err(Error::ModelFile(format!(
                    "expected tensor `{want}`, found `{name}`"
                )));
            }
            if !t.is_finite() {
                return Err(Error::ModelFile(format!(
                    "tensor `{name}` has non-finite values"
                )));
            }
            out.push(t);
        }
        Ok((self.meta, out))
    }
}

pub fn decode<M: DeserializeOwned>(expected_kind: &str, bytes: &[u8]) -> Result<Decoded<M>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::ModelFile("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {version}"
        )));
    }
    let kind =
        String::from_utf8(r.bytes()?.to_vec()).map_err(|e| Error::ModelFile(e.to_string()))?;
    if kind != expected_kind {
        return Err(Error::ModelFile(format!(
            "expected a `{expected_kind}` model, found `{kind}`"
        )));
    }
    let meta: M = serde_json::from_slice(r.bytes()?)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name =
            String::from_utf8(r.bytes()?.to_vec()).map_err(|e| Error::ModelFile(e.to_string()))?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::ModelFile("tensor too large".into()))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::ModelFile("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFile("trailing bytes".into()));
    }
    Ok(Decoded { meta, tensors })
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFile("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
}
