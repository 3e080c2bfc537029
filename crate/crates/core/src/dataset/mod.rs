//! Entities, their two modalities, partial labels, and the operations that
//! produce them from raw monthly land/water stacks.

mod io;
mod labels;
mod preprocess;
mod split;
mod synth;

use std::collections::HashMap;

pub use io::{load_dataset, load_processed, read_labels, read_manifest, save_processed, save_stacks, write_labels, ManifestRecord};
pub use labels::{class_index, class_name, LabelStore, Provenance, CLASS_NAMES, NUM_CLASSES};
pub use preprocess::{compute_fraction_map, compute_surface_area_series, pad_to_square, resize_nearest};
pub use split::split_dataset;
pub use synth::{generate_stacks, generate_synthetic, SynthClass, SynthConfig};

use crate::error::{Error, Result};

/// Side length of every fraction map fed to the model.
pub const FRACTION_MAP_SIZE: usize = 64;

/// Monthly binary land (0) / water (1) maps of one entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaterBodyStack {
    entity_id: String,
    frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl WaterBodyStack {
    /// `pixels` is frame-major, then row-major; every value must be 0 or 1.
    pub fn new(entity_id: impl Into<String>, frames: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        let entity_id = entity_id.into();
        if frames == 0 {
            return Err(Error::EmptyStack(entity_id));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidStack {
                entity: entity_id,
                reason: format!("frame size {height}x{width} must be at least 1x1"),
            });
        }
        if pixels.len() != frames * height * width {
            return Err(Error::InvalidStack {
                entity: entity_id,
                reason: format!("expected {} pixels for {frames}x{height}x{width}, got {}", frames * height * width, pixels.len()),
            });
        }
        if let Some(pos) = pixels.iter().position(|p| *p > 1) {
            return Err(Error::InvalidStack {
                entity: entity_id,
                reason: format!("pixel {pos} has value {}, expected 0 or 1", pixels[pos]),
            });
        }
        Ok(Self {
            entity_id,
            frames,
            height,
            width,
            pixels,
        })
    }

    /// Builds a stack from real-valued frames, rejecting anything that is not exactly 0 or 1.
    pub fn from_values(entity_id: impl Into<String>, frames: usize, height: usize, width: usize, values: &[f32]) -> Result<Self> {
        let entity_id = entity_id.into();
        let mut pixels = Vec::with_capacity(values.len());
        for (pos, v) in values.iter().enumerate() {
            match *v {
                0.0 => pixels.push(0),
                1.0 => pixels.push(1),
                other => {
                    return Err(Error::InvalidStack {
                        entity: entity_id,
                        reason: format!("pixel {pos} has value {other}, expected 0 or 1"),
                    })
                }
            }
        }
        Self::new(entity_id, frames, height, width, pixels)
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Square single-channel map of per-pixel water frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionMap {
    size: usize,
    pixels: Vec<f64>,
}

impl FractionMap {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::shape("fraction map", format!("{}", size * size), pixels.len()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::shape("fraction map values", "[0, 1]", v));
        }
        Ok(Self { size, pixels })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }
}

/// Per-month water-pixel counts normalised by their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceAreaSeries {
    values: Vec<f64>,
}

impl SurfaceAreaSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::shape("surface area series", "at least one step", 0));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::shape("surface area series values", "[0, 1]", v));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    pub fraction_map: FractionMap,
    pub series: SurfaceAreaSeries,
}

impl Entity {
    pub fn from_stack(stack: &WaterBodyStack) -> Result<Self> {
        Ok(Self {
            id: stack.entity_id().to_string(),
            fraction_map: compute_fraction_map(stack)?,
            series: compute_surface_area_series(stack),
        })
    }
}

/// Entities sharing one map size and one series length, plus partial labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    entities: Vec<Entity>,
    labels: LabelStore,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(entities: Vec<Entity>, labels: LabelStore) -> Result<Self> {
        let mut index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::DuplicateEntity(e.id.clone()));
            }
        }
        if let Some(first) = entities.first() {
            let (size, len) = (first.fraction_map.size(), first.series.len());
            for e in &entities {
                if e.fraction_map.size() != size {
                    return Err(Error::shape("dataset fraction maps", size, e.fraction_map.size()));
                }
                if e.series.len() != len {
                    return Err(Error::shape("dataset series length", len, e.series.len()));
                }
            }
        }
        if let Some(id) = labels.ids().find(|id| !index.contains_key(*id)) {
            return Err(Error::UnknownEntity(id.to_string()));
        }
        Ok(Self { entities, labels, index })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn labels(&self) -> &LabelStore {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.position(id).map(|i| &self.entities[i])
    }

    /// Series length shared by every entity (0 for an empty dataset).
    pub fn series_len(&self) -> usize {
        self.entities.first().map_or(0, |e| e.series.len())
    }

    pub fn map_size(&self) -> usize {
        self.entities.first().map_or(0, |e| e.fraction_map.size())
    }

    /// Same entities with a different label store.
    pub fn with_labels(&self, labels: LabelStore) -> Result<Self> {
        if let Some(id) = labels.ids().find(|id| !self.index.contains_key(*id)) {
            return Err(Error::UnknownEntity(id.to_string()));
        }
        Ok(Self {
            entities: self.entities.clone(),
            labels,
            index: self.index.clone(),
        })
    }

    /// Per-entity class (or `None`) in dataset order, looked up in `labels`.
    pub fn class_vector(&self, labels: &LabelStore) -> Vec<Option<usize>> {
        self.entities.iter().map(|e| labels.class_of(&e.id)).collect()
    }

    /// Sub-dataset holding the entities at `indices`, with labels restricted to them.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let entities: Vec<Entity> = indices.iter().map(|&i| self.entities[i].clone()).collect();
        let labels = self.labels.restricted_to(entities.iter().map(|e| e.id.as_str()));
        Self::new(entities, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(id: &str, t: usize) -> Entity {
        Entity {
            id: id.into(),
            fraction_map: FractionMap::zeros(4),
            series: SurfaceAreaSeries::new(vec![0.0; t]).unwrap(),
        }
    }

    #[test]
    fn stack_rejects_non_binary_and_empty() {
        assert!(matches!(WaterBodyStack::new("a", 0, 2, 2, vec![]), Err(Error::EmptyStack(_))));
        let err = WaterBodyStack::from_values("a", 1, 1, 2, &[0.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("value 2"));
        assert!(WaterBodyStack::new("a", 1, 1, 2, vec![0, 1]).is_ok());
    }

    #[test]
    fn dataset_rejects_duplicates_and_dangling_labels() {
        let dup = Dataset::new(vec![entity("a", 3), entity("a", 3)], LabelStore::default());
        assert!(matches!(dup, Err(Error::DuplicateEntity(_))));
        let mut labels = LabelStore::default();
        labels.insert("zz", 0, Provenance::Seed).unwrap();
        assert!(matches!(Dataset::new(vec![entity("a", 3)], labels), Err(Error::UnknownEntity(_))));
        let ragged = Dataset::new(vec![entity("a", 3), entity("b", 4)], LabelStore::default());
        assert!(matches!(ragged, Err(Error::ShapeMismatch { .. })));
    }
}
