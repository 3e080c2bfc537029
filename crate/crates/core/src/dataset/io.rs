//! Manifest, label-file and processed-dataset I/O.
//!
//! * Manifest: `entity_id<TAB>stack_path<TAB>label|_`, one entity per line;
//!   stack paths are relative to the dataset root and point at `T × H × W`
//!   dense arrays.
//! * Labels: `entity_id<TAB>class[<TAB>seed|augmented]`.
//! * Processed directory: `entities.tsv` (`entity_id<TAB>label|_`),
//!   `fraction_maps.ssc` (`N × S × S`) and `series.ssc` (`N × T`).

use std::fs;
use std::path::{Path, PathBuf};

use super::{class_index, class_name, Dataset, Entity, FractionMap, LabelStore, Provenance, SurfaceAreaSeries, WaterBodyStack};
use crate::array_io::DenseArray;
use crate::error::{Error, Result};

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const FRACTION_MAPS_FILE: &str = "fraction_maps.ssc";
pub const SERIES_FILE: &str = "series.ssc";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub entity_id: String,
    pub stack_path: PathBuf,
    pub label: Option<usize>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_label(token: &str, path: &Path, line: usize) -> Result<Option<usize>> {
    match token {
        "_" | "" => Ok(None),
        t => class_index(t)
            .map(Some)
            .ok_or_else(|| Error::format("label", path, format!("line {line}: unknown class `{t}`"))),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(
                "manifest",
                path,
                format!("line {line}: expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        records.push(ManifestRecord {
            entity_id: fields[0].to_string(),
            stack_path: PathBuf::from(fields[1]),
            label: parse_label(fields[2], path, line)?,
        });
    }
    Ok(records)
}

/// Reads every stack listed in the manifest and derives both modalities.
pub fn load_dataset(root: &Path, manifest_path: &Path) -> Result<Dataset> {
    let records = read_manifest(manifest_path)?;
    let mut entities = Vec::with_capacity(records.len());
    let mut labels = LabelStore::default();
    let mut frames: Option<usize> = None;
    for rec in records {
        let path = root.join(&rec.stack_path);
        if !path.exists() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("stack for `{}` not found", rec.entity_id)),
            ));
        }
        let arr = DenseArray::read(&path)?;
        if arr.dims.len() != 3 {
            return Err(Error::format("stack", &path, format!("expected T x H x W, got dims {:?}", arr.dims)));
        }
        let (t, h, w) = (arr.dims[0], arr.dims[1], arr.dims[2]);
        match frames {
            Some(expected) if expected != t => {
                return Err(Error::format(
                    "stack",
                    &path,
                    format!("`{}` has {t} frames but the dataset uses {expected}", rec.entity_id),
                ))
            }
            _ => frames = Some(t),
        }
        let stack = WaterBodyStack::from_values(&rec.entity_id, t, h, w, &arr.data)?;
        entities.push(Entity::from_stack(&stack)?);
        if let Some(class) = rec.label {
            labels.insert(&rec.entity_id, class, Provenance::Seed)?;
        }
    }
    Dataset::new(entities, labels)
}

pub fn read_labels(path: &Path) -> Result<LabelStore> {
    let text = read_text(path)?;
    let mut store = LabelStore::default();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::format("label", path, format!("line {line}: expected 2 or 3 fields")));
        }
        let Some(class) = parse_label(fields[1], path, line)? else {
            continue;
        };
        let provenance = match fields.get(2).copied() {
            None | Some("seed") => Provenance::Seed,
            Some("augmented") => Provenance::Augmented,
            Some(other) => {
                return Err(Error::format("label", path, format!("line {line}: unknown provenance `{other}`")))
            }
        };
        if store.contains(fields[0]) {
            return Err(Error::format("label", path, format!("line {line}: duplicate id `{}`", fields[0])));
        }
        store.insert(fields[0], class, provenance)?;
    }
    Ok(store)
}

pub fn write_labels(path: &Path, labels: &LabelStore) -> Result<()> {
    let mut out = String::new();
    for (id, class, prov) in labels.iter() {
        let prov = match prov {
            Provenance::Seed => "seed",
            Provenance::Augmented => "augmented",
        };
        out.push_str(&format!("{id}\t{}\t{prov}\n", class_name(class)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes each stack as `T × H × W` under `dir/stacks/` plus a manifest
/// `dir/manifest.tsv` with paths relative to `dir`.
pub fn save_stacks(dir: &Path, stacks: &[(WaterBodyStack, Option<usize>)]) -> Result<PathBuf> {
    let stack_dir = dir.join("stacks");
    fs::create_dir_all(&stack_dir).map_err(|e| Error::io(&stack_dir, e))?;
    let mut manifest = String::new();
    for (stack, label) in stacks {
        let rel = PathBuf::from("stacks").join(format!("{}.ssc", stack.entity_id()));
        DenseArray::new(
            vec![stack.frames(), stack.height(), stack.width()],
            stack.pixels().iter().map(|v| f32::from(*v)).collect(),
        )?
        .write(&dir.join(&rel))?;
        let label = label.map_or("_".to_string(), class_name);
        manifest.push_str(&format!("{}\t{}\t{label}\n", stack.entity_id(), rel.display()));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn save_processed(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut listing = String::new();
    for e in dataset.entities() {
        let label = dataset.labels().class_of(&e.id).map_or("_".to_string(), class_name);
        listing.push_str(&format!("{}\t{label}\n", e.id));
    }
    let path = dir.join(ENTITIES_FILE);
    fs::write(&path, listing).map_err(|e| Error::io(&path, e))?;
    let (n, s, t) = (dataset.len(), dataset.map_size(), dataset.series_len());
    DenseArray::from_f64(
        vec![n, s, s],
        dataset.entities().iter().flat_map(|e| e.fraction_map.pixels().iter().copied()),
    )?
    .write(&dir.join(FRACTION_MAPS_FILE))?;
    DenseArray::from_f64(vec![n, t], dataset.entities().iter().flat_map(|e| e.series.values().iter().copied()))?
        .write(&dir.join(SERIES_FILE))
}

pub fn load_processed(dir: &Path) -> Result<Dataset> {
    let listing_path = dir.join(ENTITIES_FILE);
    let text = read_text(&listing_path)?;
    let mut ids = Vec::new();
    let mut labels = LabelStore::default();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::format("entity listing", &listing_path, format!("line {line}: expected 2 fields")));
        }
        if let Some(class) = parse_label(fields[1], &listing_path, line)? {
            labels.insert(fields[0], class, Provenance::Seed)?;
        }
        ids.push(fields[0].to_string());
    }
    let maps_path = dir.join(FRACTION_MAPS_FILE);
    let maps = DenseArray::read(&maps_path)?;
    let series_path = dir.join(SERIES_FILE);
    let series = DenseArray::read(&series_path)?;
    if maps.dims.len() != 3 || maps.dims[0] != ids.len() || maps.dims[1] != maps.dims[2] {
        return Err(Error::format(
            "fraction maps",
            &maps_path,
            format!("dims {:?} disagree with {} listed entities", maps.dims, ids.len()),
        ));
    }
    if series.dims.len() != 2 || series.dims[0] != ids.len() {
        return Err(Error::format(
            "series",
            &series_path,
            format!("dims {:?} disagree with {} listed entities", series.dims, ids.len()),
        ));
    }
    let (s, t) = (maps.dims[1], series.dims[1]);
    let entities = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let fm = maps.data[i * s * s..(i + 1) * s * s].iter().map(|v| f64::from(*v)).collect();
            let ts = series.data[i * t..(i + 1) * t].iter().map(|v| f64::from(*v)).collect();
            Ok(Entity {
                id,
                fraction_map: FractionMap::new(s, fm)?,
                series: SurfaceAreaSeries::new(ts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entities, labels)
}
