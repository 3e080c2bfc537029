//! Experiment grid: pretrain each variant, optionally mine new labels, train
//! every classifier mode and tabulate test F1 over replicate seeds.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment_labels, cluster_embeddings, merge_labels, DEFAULT_CLUSTERS};
use crate::classifier::{build_classifier, ClassifierConfig, ClassifierMode, EvalReport};
use crate::dataset::{class_name, Dataset, LabelStore, Provenance};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::training::{extract_embeddings, Ablation, Checkpoint, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SAE")]
    Sae,
    #[serde(rename = "TAE")]
    Tae,
    #[serde(rename = "SLTLAE")]
    Sltlae,
    #[serde(rename = "SLTLAE_CL")]
    SltlaeCl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sae, Variant::Tae, Variant::Sltlae, Variant::SltlaeCl];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sae => "SAE",
            Variant::Tae => "TAE",
            Variant::Sltlae => "SLTLAE",
            Variant::SltlaeCl => "SLTLAE_CL",
        }
    }

    /// Only the full model uses the constrained loss.
    pub fn ablation(self) -> Ablation {
        match self {
            Variant::Sae => Ablation::SpatialOnly,
            Variant::Tae => Ablation::TemporalOnly,
            Variant::Sltlae => Ablation::NoConstraint,
            Variant::SltlaeCl => Ablation::Full,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub variants: Vec<Variant>,
    pub modes: Vec<ClassifierMode>,
    /// Adds rows trained on seed plus mined labels.
    pub augmentation: bool,
    pub labels_per_class: usize,
    pub seeds: Vec<u64>,
    pub clusters: usize,
    /// Pretraining schedule; `seed` and `ablation` are set per cell.
    pub train: TrainConfig,
    /// `seed` is set per replicate.
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            modes: ClassifierMode::ALL.to_vec(),
            augmentation: true,
            labels_per_class: 10,
            seeds: (1..=5).collect(),
            clusters: DEFAULT_CLUSTERS,
            train: TrainConfig::desk(),
            classifier: ClassifierConfig::desk(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("plan needs at least one variant, mode and seed".into()));
        }
        if self.labels_per_class == 0 || self.clusters == 0 {
            return Err(Error::InvalidConfig("labels_per_class and clusters must be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub variant: Variant,
    pub mode: ClassifierMode,
    pub augmented: bool,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.variant, self.mode)?;
        if self.augmented {
            f.write_str(" - new labels")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: CellKey,
    pub name: String,
    pub runs: Vec<CellRun>,
    pub mean_per_class: Vec<f64>,
    pub std_per_class: Vec<f64>,
    pub mean_macro: Option<f64>,
    pub std_macro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStats {
    pub variant: Variant,
    pub seed: u64,
    pub new_labels: usize,
    pub per_class: Vec<usize>,
    /// Agreement with the hidden ground truth, when any label was added.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub classes: Vec<String>,
    pub rows: Vec<TableRow>,
    pub augmentation: Vec<AugmentationStats>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ComparisonTable {
    pub fn row(&self, key: CellKey) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn macro_f1(&self, key: CellKey, seed: u64) -> Option<f64> {
        self.row(key)?
            .runs
            .iter()
            .find(|r| r.seed == seed)?
            .report
            .as_ref()
            .map(|r| r.macro_f1)
    }

    pub fn augmentation_stats(&self, variant: Variant, seed: u64) -> Option<&AugmentationStats> {
        self.augmentation.iter().find(|a| a.variant == variant && a.seed == seed)
    }

    fn from_runs(num_classes: usize, cells: BTreeMap<CellKey, Vec<CellRun>>, augmentation: Vec<AugmentationStats>) -> Self {
        let rows = cells
            .into_iter()
            .map(|(key, runs)| {
                let ok: Vec<&EvalReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
                let (mut mean_per_class, mut std_per_class) = (Vec::new(), Vec::new());
                let (mut mean_macro, mut std_macro) = (None, None);
                if !ok.is_empty() {
                    for c in 0..num_classes {
                        let (m, s) = mean_std(&ok.iter().map(|r| r.per_class_f1[c]).collect::<Vec<_>>());
                        mean_per_class.push(m);
                        std_per_class.push(s);
                    }
                    let (m, s) = mean_std(&ok.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
                    mean_macro = Some(m);
                    std_macro = Some(s);
                }
                TableRow {
                    key,
                    name: key.to_string(),
                    runs,
                    mean_per_class,
                    std_per_class,
                    mean_macro,
                    std_macro,
                }
            })
            .collect();
        Self {
            classes: (0..num_classes).map(class_name).collect(),
            rows,
            augmentation,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable table of mean ± std over seeds.
    pub fn render(&self) -> String {
        let mut header = vec!["cell".to_string()];
        header.extend(self.classes.iter().cloned());
        header.extend(["macro F1".to_string(), "runs".to_string()]);
        let mut lines = vec![header];
        for row in &self.rows {
            let mut line = vec![row.name.clone()];
            for c in 0..self.classes.len() {
                line.push(match (row.mean_per_class.get(c), row.std_per_class.get(c)) {
                    (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                    _ => "-".into(),
                });
            }
            line.push(match (row.mean_macro, row.std_macro) {
                (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                _ => "failed".into(),
            });
            let failed = row.runs.iter().filter(|r| r.report.is_none()).count();
            line.push(format!("{}/{}", row.runs.len() - failed, row.runs.len()));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        for row in &self.rows {
            for run in row.runs.iter().filter(|r| r.error.is_some()) {
                let _ = writeln!(out, "failed: {} seed {}: {}", row.name, run.seed, run.error.as_deref().unwrap_or(""));
            }
        }
        if !self.augmentation.is_empty() {
            let _ = writeln!(out, "\nnew labels (variant, seed, count, per class, accuracy)");
            for a in &self.augmentation {
                let acc = a.accuracy.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(out, "{}\t{}\t{}\t{:?}\t{acc}", a.variant, a.seed, a.new_labels, a.per_class);
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("table.json");
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("table.txt");
        fs::write(&txt, self.render()).map_err(|e| Error::io(&txt, e))
    }
}

/// Uniformly samples `n_per_class` labeled entities of every class.
pub fn select_seed_labels(labels: &LabelStore, n_per_class: usize, seed: u64) -> Result<LabelStore> {
    let mut out = LabelStore::new(labels.num_classes());
    for class in 0..labels.num_classes() {
        let pool = labels.ids_of_class(class);
        if pool.len() < n_per_class {
            return Err(Error::InvalidLabels(format!(
                "class {} has {} labeled entities, {n_per_class} requested",
                class_name(class),
                pool.len()
            )));
        }
        let mut rng = rng_for(seed, &[stream::SEED_LABELS, class as u64]);
        let mut picked = index::sample(&mut rng, pool.len(), n_per_class).into_vec();
        picked.sort_unstable();
        for i in picked {
            out.insert(pool[i], class, Provenance::Seed)?;
        }
    }
    Ok(out)
}

/// Pretrains every requested variant for one replicate. The two
/// full-modality variants share their reconstruction-only first phase.
pub fn pretrain_variants(
    plan: &ExperimentPlan,
    train: &Dataset,
    seed_labels: &LabelStore,
    seed: u64,
) -> BTreeMap<Variant, Result<Checkpoint, String>> {
    let config_for = |v: Variant| TrainConfig {
        seed,
        ablation: v.ablation(),
        ..plan.train.clone()
    };
    let mut out = BTreeMap::new();
    let wants = |v| plan.variants.contains(&v);
    for v in [Variant::Sae, Variant::Tae] {
        if wants(v) {
            log::info!("seed {seed}: pretraining {v}");
            let cfg = config_for(v);
            let res = Trainer::new(cfg.clone(), train, seed_labels).and_then(|mut t| {
                t.run_until(cfg.epochs, |_| Ok(()))?;
                Ok(t.checkpoint())
            });
            out.insert(v, res.map_err(|e| e.to_string()));
        }
    }
    let full: Vec<Variant> = [Variant::Sltlae, Variant::SltlaeCl].into_iter().filter(|v| wants(*v)).collect();
    if full.is_empty() {
        return out;
    }
    log::info!("seed {seed}: pretraining shared phase for {full:?}");
    let base = config_for(Variant::Sltlae);
    let shared = Trainer::new(base.clone(), train, seed_labels).and_then(|mut t| {
        t.run_until(base.onset(), |_| Ok(()))?;
        Ok(t.checkpoint())
    });
    for v in full {
        let res = shared.as_ref().map_err(|e| e.to_string()).and_then(|ckpt| {
            log::info!("seed {seed}: pretraining {v} from the shared phase");
            let run = || -> Result<Checkpoint> {
                let mut t = Trainer::resume(ckpt.clone(), train, seed_labels)?;
                t.set_ablation(v.ablation())?;
                t.run_until(base.epochs, |_| Ok(()))?;
                Ok(t.checkpoint())
            };
            run().map_err(|e| e.to_string())
        });
        out.insert(v, res);
    }
    out
}

fn run_cell(
    plan: &ExperimentPlan,
    ckpt: Option<&Checkpoint>,
    variant: Variant,
    mode: ClassifierMode,
    labels: &LabelStore,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<EvalReport> {
    let cfg = ClassifierConfig {
        seed,
        ..plan.classifier.clone()
    };
    let model = TrainConfig {
        ablation: variant.ablation(),
        ..plan.train.clone()
    }
    .model_config();
    let pretrained = match mode {
        ClassifierMode::Scratch => None,
        _ => Some(
            &ckpt
                .ok_or_else(|| Error::InvalidConfig(format!("no pretrained {variant} model")))?
                .state
                .params,
        ),
    };
    let mut clf = build_classifier(&model, pretrained, mode, labels.num_classes(), &cfg)?;
    clf.train(train, labels, &cfg)?;
    clf.evaluate(test, test.labels())
}

/// Runs the whole grid for every seed in the plan. `train` and `test` carry
/// their full ground-truth labels; only the sampled seed labels are used
/// for learning. Failures are recorded per cell.
pub fn run_experiment(plan: &ExperimentPlan, train: &Dataset, test: &Dataset) -> Result<ComparisonTable> {
    plan.validate()?;
    let num_classes = train.labels().num_classes();
    let mut cells: BTreeMap<CellKey, Vec<CellRun>> = BTreeMap::new();
    let mut augmentation = Vec::new();
    for &seed in &plan.seeds {
        let seed_labels = select_seed_labels(train.labels(), plan.labels_per_class, seed)?;
        let pretrained = pretrain_variants(plan, train, &seed_labels, seed);
        for &variant in &plan.variants {
            let ckpt = pretrained.get(&variant).expect("every variant pretrained");
            let mut label_sets = vec![(false, Ok(seed_labels.clone()))];
            if plan.augmentation {
                let merged = ckpt.as_ref().map_err(Clone::clone).and_then(|ck| {
                    let emb = extract_embeddings(ck, train).map_err(|e| e.to_string())?;
                    let clusters = cluster_embeddings(&emb.ids, &emb.rows, plan.clusters, seed).map_err(|e| e.to_string())?;
                    let result = augment_labels(&clusters, &seed_labels).map_err(|e| e.to_string())?;
                    augmentation.push(AugmentationStats {
                        variant,
                        seed,
                        new_labels: result.new_labels.len(),
                        per_class: result.class_counts(num_classes),
                        accuracy: result.accuracy(train.labels()),
                    });
                    log::info!("seed {seed}: {variant} mined {} labels", result.new_labels.len());
                    merge_labels(&seed_labels, &result).map_err(|e| e.to_string())
                });
                label_sets.push((true, merged));
            }
            for (augmented, labels) in &label_sets {
                for &mode in &plan.modes {
                    let key = CellKey {
                        variant,
                        mode,
                        augmented: *augmented,
                    };
                    let outcome = labels.as_ref().map_err(Clone::clone).and_then(|labels| {
                        let ck = ckpt.as_ref().ok();
                        if mode != ClassifierMode::Scratch {
                            if let Err(e) = ckpt {
                                return Err(format!("pretraining failed: {e}"));
                            }
                        }
                        run_cell(plan, ck, variant, mode, labels, train, test, seed).map_err(|e| e.to_string())
                    });
                    match &outcome {
                        Ok(r) => log::info!("seed {seed}: {key}: macro F1 {:.4}", r.macro_f1),
                        Err(e) => log::warn!("seed {seed}: {key} failed: {e}"),
                    }
                    cells.entry(key).or_default().push(CellRun {
                        seed,
                        error: outcome.as_ref().err().cloned(),
                        report: outcome.ok(),
                    });
                }
            }
        }
    }
    Ok(ComparisonTable::from_runs(num_classes, cells, augmentation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_dataset, SynthConfig};
    use crate::model::ModelConfig;

    #[test]
    fn seed_label_selection() {
        let data = generate_synthetic(&SynthConfig::balanced(20), 1).unwrap();
        let s = select_seed_labels(data.labels(), 10, 4).unwrap();
        assert_eq!(s.len(), 40);
        assert_eq!(s.class_counts(), vec![10; 4]);
        assert_eq!(s, select_seed_labels(data.labels(), 10, 4).unwrap());
        assert_ne!(s, select_seed_labels(data.labels(), 10, 5).unwrap());
        assert!(select_seed_labels(data.labels(), 21, 4).is_err());
    }

    #[test]
    fn plan_parses_from_toml() {
        let plan = ExperimentPlan::from_toml(
            r#"
            variants = ["SLTLAE", "SLTLAE_CL"]
            modes = ["enc_fixed"]
            augmentation = false
            seeds = [1]
            [train]
            epochs = 4
            "#,
        )
        .unwrap();
        assert_eq!(plan.variants, vec![Variant::Sltlae, Variant::SltlaeCl]);
        assert_eq!(plan.train.epochs, 4);
        assert_eq!(plan.train.batch_size, 256);
        assert!(ExperimentPlan::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn small_grid() {
        let data = generate_synthetic(
            &SynthConfig {
                frames: 12,
                ..SynthConfig::balanced(8)
            },
            3,
        )
        .unwrap();
        let (train, test) = split_dataset(&data, 3).unwrap();
        let plan = ExperimentPlan {
            variants: vec![Variant::Sltlae, Variant::SltlaeCl],
            modes: vec![ClassifierMode::EncFixed],
            augmentation: true,
            labels_per_class: 2,
            seeds: vec![1, 2],
            clusters: 4,
            train: TrainConfig {
                epochs: 2,
                batch_size: 8,
                model: ModelConfig {
                    embed_dim: 8,
                    series_len: 12,
                    spatial_channels: vec![2, 2, 2, 2],
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            },
            classifier: ClassifierConfig {
                epochs: 3,
                ..ClassifierConfig::default()
            },
        };
        let table = run_experiment(&plan, &train, &test).unwrap();
        assert_eq!(table.rows.len(), 4);
        for row in &table.rows {
            assert_eq!(row.runs.len(), 2);
            assert!(row.runs.iter().all(|r| r.report.is_some()), "{:?}", row.runs);
        }
        assert!(table.render().contains("SLTLAE_CL_enc_fixed - new labels"));
        assert_eq!(table.augmentation.len(), 4);
    }
}
