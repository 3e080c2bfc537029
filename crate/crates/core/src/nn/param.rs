use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Handle to a contiguous parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    offset: usize,
    len: usize,
}

impl ParamId {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Named parameter tensors packed into one flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor initialised uniformly in `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        self.values
            .extend((0..len).map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }));
        self.push_entry(name, shape, offset, len)
    }

    pub fn add_constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let len: usize = shape.iter().product();
        let offset = self.values.len();
        self.values.extend(std::iter::repeat_n(value, len));
        self.push_entry(name, shape, offset, len)
    }

    fn push_entry(&mut self, name: &str, shape: &[usize], offset: usize, len: usize) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "parameter `{name}` registered twice"
        );
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        ParamId { offset, len }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.range()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.range()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.entry(name).map(|e| &self.values[e.offset..e.offset + e.len])
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Boolean mask over the flat vector, `true` where the owning tensor's
    /// name satisfies `pred`.
    pub fn mask_where(&self, pred: impl Fn(&str) -> bool) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for e in &self.entries {
            if pred(&e.name) {
                mask[e.offset..e.offset + e.len].fill(true);
            }
        }
        mask
    }

    /// Copies every tensor whose name and shape match from `other`.
    /// Returns the names that were copied.
    pub fn copy_matching(&mut self, other: &ParamStore, pred: impl Fn(&str) -> bool) -> Vec<String> {
        let mut copied = Vec::new();
        for e in &self.entries {
            if !pred(&e.name) {
                continue;
            }
            if let Some(src) = other.entry(&e.name) {
                if src.shape == e.shape {
                    self.values[e.offset..e.offset + e.len]
                        .copy_from_slice(&other.values[src.offset..src.offset + src.len]);
                    copied.push(e.name.clone());
                }
            }
        }
        copied
    }

    /// Rebuilds a store from serialized parts, validating the layout.
    pub fn from_parts(entries: Vec<ParamEntry>, values: Vec<f64>) -> Result<Self, String> {
        let mut expected = 0;
        for e in &entries {
            if e.offset != expected || e.shape.iter().product::<usize>() != e.len {
                return Err(format!("inconsistent layout for `{}`", e.name));
            }
            expected += e.len;
        }
        if expected != values.len() {
            return Err(format!("expected {expected} values, found {}", values.len()));
        }
        Ok(Self { entries, values })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
