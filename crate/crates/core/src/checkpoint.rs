//! Binary container for parameter snapshots: a tag line, a JSON header and
//! raw little-endian f64 arrays, so values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const CONTAINER_TAG: &[u8] = b"SSCLUST-CKPT-1\n";

const KIND: &str = "checkpoint";

pub fn encode<H: Serialize>(header: &H, arrays: &[&[f64]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let total: usize = arrays.iter().map(|a| a.len()).sum();
    let mut out = Vec::with_capacity(CONTAINER_TAG.len() + 12 + json.len() + arrays.len() * 8 + total * 8);
    out.extend_from_slice(CONTAINER_TAG);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(KIND, self.path, "truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<(H, Vec<Vec<f64>>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(CONTAINER_TAG.len()).ok() != Some(CONTAINER_TAG) {
        return Err(Error::format(KIND, path, "missing container tag"));
    }
    let hlen = r.u64()? as usize;
    let header: H = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::format(KIND, path, e))?;
    let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u64()? as usize;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::format(KIND, path, "array too large"))?)?;
        arrays.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::format(KIND, path, "trailing bytes"));
    }
    Ok((header, arrays))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_file<H: Serialize>(path: &Path, header: &H, arrays: &[&[f64]]) -> Result<()> {
    let bytes = encode(header, arrays)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let header: BTreeMap<String, usize> = [("epoch".to_string(), 3)].into();
        let a = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300];
        let b: Vec<f64> = Vec::new();
        let bytes = encode(&header, &[&a, &b]).unwrap();
        let (h, arrays): (BTreeMap<String, usize>, _) = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(h, header);
        assert_eq!(arrays.len(), 2);
        assert!(arrays[0].iter().zip(&a).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(arrays[1].is_empty());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&0u8, &[&[1.0]]).unwrap();
        for cut in [3, bytes.len() - 1] {
            assert!(decode::<u8>(&bytes[..cut], Path::new("x")).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<u8>(&extra, Path::new("x")).is_err());
    }
}
