//! Dense `f32` array container.
//!
//! Layout (little-endian): the 8-byte magic `SSCLUST1`, a `u32` rank, one
//! `u64` per dimension, then the row-major values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSCLUST1";

#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl DenseArray {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape("dense array", expected, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(dims, data.into_iter().map(|v| v as f32).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format("dense array", path, reason);
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing SSCLUST1 header"));
        }
        let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = 12 + 8 * rank;
        if rank == 0 || rank > 8 || bytes.len() < header {
            return Err(bad("truncated or invalid dimension header"));
        }
        let dims: Vec<usize> = bytes[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| bad("dimension product overflows"))?;
        if bytes.len() != header + 4 * count {
            return Err(bad(&format!(
                "payload has {} bytes, dims {:?} need {}",
                bytes.len() - header,
                dims,
                4 * count
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn bytes_round_trip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32 + seed as f32).sin()).collect();
            let arr = DenseArray::new(dims, data).unwrap();
            let back = DenseArray::from_bytes(&arr.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, arr);
        }
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        let p = Path::new("x");
        assert!(DenseArray::from_bytes(b"NOTMAGIC\x01\0\0\0", p).is_err());
        let mut bytes = DenseArray::new(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes.pop();
        assert!(DenseArray::from_bytes(&bytes, p).is_err());
    }
}
