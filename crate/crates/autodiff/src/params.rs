//! Named parameter storage and its flat binary encoding.
//!
//! Encoding (all integers little-endian `u32`):
//! `count`, then per entry `name_len`, UTF-8 name, `ndim`, `dims…`, and the
//! row-major `f32` values in little-endian order.

use crate::error::{AdError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Put every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Put every parameter on `tape` as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.num_scalars());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decode a blob produced by [`ParamStore::to_bytes`]; returns the store
    /// and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|e| AdError::Decode(e.to_string()))?.to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(4 * n)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| AdError::Decode(e.to_string()))?;
            store.add(name, t);
        }
        Ok((store, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AdError::Decode(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_roundtrip(vals in proptest::collection::vec(-1e6f32..1e6, 1..40), split in 1usize..5) {
            let mut s = ParamStore::new();
            let n = vals.len();
            s.add("a.weight", Tensor::row_vector(vals.clone()));
            if n % split == 0 {
                s.add("b", Tensor::matrix(split, n / split, vals).unwrap());
            }
            let bytes = s.to_bytes();
            let (back, used) = ParamStore::from_bytes(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, s);
        }
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let mut s = ParamStore::new();
        s.add("x", Tensor::row_vector(vec![1.0, 2.0]));
        let bytes = s.to_bytes();
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
