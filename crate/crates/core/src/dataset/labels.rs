use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Farm", "River", "StableLake", "SeasonalLake"];

pub fn class_name(class: usize) -> String {
    CLASS_NAMES
        .get(class)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("class{class}"))
}

/// Parses a class by name (case-insensitive) or by index.
pub fn class_index(token: &str) -> Option<usize> {
    CLASS_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(token))
        .or_else(|| token.strip_prefix("class").unwrap_or(token).parse().ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LabelEntry {
    class: usize,
    provenance: Provenance,
}

/// Partial class assignment over entity ids, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStore {
    num_classes: usize,
    entries: BTreeMap<String, LabelEntry>,
}

impl Default for LabelStore {
    fn default() -> Self {
        Self::new(NUM_CLASSES)
    }
}

impl LabelStore {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            entries: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn insert(&mut self, id: impl Into<String>, class: usize, provenance: Provenance) -> Result<()> {
        let id = id.into();
        if class >= self.num_classes {
            return Err(Error::InvalidLabels(format!(
                "class {class} for `{id}` outside [0, {})",
                self.num_classes
            )));
        }
        self.entries.insert(id, LabelEntry { class, provenance });
        Ok(())
    }

    pub fn class_of(&self, id: &str) -> Option<usize> {
        self.entries.get(id).map(|e| e.class)
    }

    pub fn provenance_of(&self, id: &str) -> Option<Provenance> {
        self.entries.get(id).map(|e| e.provenance)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, Provenance)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), e.class, e.provenance))
    }

    /// Ids carrying `provenance`, in id order.
    pub fn ids_with(&self, provenance: Provenance) -> Vec<&str> {
        self.iter().filter(|(_, _, p)| *p == provenance).map(|(id, _, _)| id).collect()
    }

    /// Ids labeled with `class`, in id order.
    pub fn ids_of_class(&self, class: usize) -> Vec<&str> {
        self.iter().filter(|(_, c, _)| *c == class).map(|(id, _, _)| id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in self.entries.values() {
            counts[e.class] += 1;
        }
        counts
    }

    pub fn restricted_to<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut out = Self::new(self.num_classes);
        for id in ids {
            if let Some(e) = self.entries.get(id) {
                out.entries.insert(id.to_string(), *e);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_tokens() {
        assert_eq!(class_index("farm"), Some(0));
        assert_eq!(class_index("SeasonalLake"), Some(3));
        assert_eq!(class_index("2"), Some(2));
        assert_eq!(class_index("class1"), Some(1));
        assert_eq!(class_index("swamp"), None);
    }

    #[test]
    fn rejects_out_of_range_class() {
        let mut s = LabelStore::default();
        assert!(s.insert("a", 4, Provenance::Seed).is_err());
        s.insert("a", 3, Provenance::Augmented).unwrap();
        assert_eq!(s.class_counts(), vec![0, 0, 0, 1]);
        assert_eq!(s.ids_with(Provenance::Augmented), vec!["a"]);
    }
}
