use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ssclust::array_io::DenseArray;
use ssclust::augmentation::{augment_labels, cluster_embeddings, write_audit, DEFAULT_CLUSTERS};
use ssclust::classifier::{build_classifier, Classifier, ClassifierConfig, ClassifierMode};
use ssclust::dataset::{
    generate_stacks, load_dataset, load_processed, read_labels, save_processed, save_stacks, split_dataset, write_labels,
    Dataset, LabelStore, Provenance, SynthConfig,
};
use ssclust::experiments::{run_experiment, ExperimentPlan};
use ssclust::training::{extract_embeddings, metrics_path, train_to_file, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "ssclust", version, about = "Semi-supervised multimodal water-body embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw stacks listed in a manifest into fraction maps and series.
    Preprocess {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled synthetic corpus (raw stacks plus manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 48)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML generator settings; overrides --per-class and --frames.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Split processed data into train and test halves, stratified by class.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Pretrain the autoencoder.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// TOML training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write latent embeddings (`OUT`) and their ids (`OUT.ids`).
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster embeddings and mine labels from pure clusters.
    Augment {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Train a classifier on labeled entities.
    ClassifyTrain {
        /// Pretrained autoencoder; required unless --mode scratch.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "enc_upd")]
        mode: ClassifierMode,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// TOML classifier configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training configuration giving the architecture for --mode scratch.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a classifier on fully labeled data.
    Evaluate {
        #[arg(long)]
        clf: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the labels stored with the data.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run an experiment plan on processed, fully labeled data.
    Experiment {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn labels_or_stored(data: &Dataset, path: Option<&Path>) -> Result<LabelStore> {
    Ok(match path {
        Some(p) => read_labels(p)?,
        None => data.labels().clone(),
    })
}

fn ids_path(emb: &Path) -> PathBuf {
    let mut s = emb.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { root, manifest, out } => {
            let data = load_dataset(&root, &manifest)?;
            save_processed(&out, &data)?;
            log::info!("{} entities ({} labeled) written to {}", data.len(), data.labels().len(), out.display());
        }
        Command::Synth {
            out,
            per_class,
            frames,
            seed,
            config,
        } => {
            let cfg = match config {
                Some(p) => read_toml(Some(&p))?,
                None => SynthConfig {
                    frames,
                    ..SynthConfig::balanced(per_class)
                },
            };
            let stacks: Vec<_> = generate_stacks(&cfg, seed)?.into_iter().map(|(s, c)| (s, Some(c))).collect();
            let manifest = save_stacks(&out, &stacks)?;
            log::info!("{} stacks listed in {}", stacks.len(), manifest.display());
        }
        Command::Split { data, seed, train, test } => {
            let data = load_processed(&data)?;
            let (tr, te) = split_dataset(&data, seed)?;
            save_processed(&train, &tr)?;
            save_processed(&test, &te)?;
            log::info!("train {} / test {}", tr.len(), te.len());
        }
        Command::Train {
            data,
            labels,
            config,
            out,
        } => {
            let data = load_processed(&data)?;
            let labels = labels_or_stored(&data, labels.as_deref())?;
            let cfg: TrainConfig = read_toml(config.as_deref())?;
            let ckpt = train_to_file(&data, &labels, &cfg, &out)?;
            if let Some(last) = ckpt.state.history.last() {
                log::info!("epoch {}: total loss {:.6}", last.epoch, last.losses.total);
            }
            log::info!("metrics in {}", metrics_path(&out).display());
        }
        Command::Embed { ckpt, data, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let data = load_processed(&data)?;
            let emb = extract_embeddings(&ckpt, &data)?;
            DenseArray::from_f64(vec![emb.rows.len(), emb.dim], emb.rows.iter().flatten().copied())?.write(&out)?;
            let ids = ids_path(&out);
            fs::write(&ids, emb.ids.join("\n") + "\n").with_context(|| format!("writing {}", ids.display()))?;
        }
        Command::Augment {
            emb,
            labels,
            k,
            seed,
            out,
            audit,
        } => {
            let arr = DenseArray::read(&emb)?;
            if arr.dims.len() != 2 {
                bail!("{}: expected a 2-D embedding matrix, got dims {:?}", emb.display(), arr.dims);
            }
            let ids_file = ids_path(&emb);
            let ids: Vec<String> = fs::read_to_string(&ids_file)
                .with_context(|| format!("reading {}", ids_file.display()))?
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let d = arr.dims[1];
            let rows: Vec<Vec<f64>> = arr.data.chunks_exact(d).map(|r| r.iter().map(|v| f64::from(*v)).collect()).collect();
            let labels = read_labels(&labels)?;
            let clusters = cluster_embeddings(&ids, &rows, k, seed)?;
            let result = augment_labels(&clusters, &labels)?;
            let mut new = LabelStore::new(labels.num_classes());
            for (id, c) in &result.new_labels {
                new.insert(id.clone(), *c, Provenance::Augmented)?;
            }
            write_labels(&out, &new)?;
            if let Some(p) = audit {
                write_audit(&p, &result, labels.num_classes())?;
            }
            log::info!("{} new labels, per class {:?}", result.new_labels.len(), result.class_counts(labels.num_classes()));
        }
        Command::ClassifyTrain {
            ckpt,
            mode,
            labels,
            data,
            config,
            train_config,
            out,
        } => {
            let data = load_processed(&data)?;
            let labels = read_labels(&labels)?;
            let cfg: ClassifierConfig = read_toml(config.as_deref())?;
            let ckpt = ckpt.map(|p| Checkpoint::load(&p)).transpose()?;
            let model = match &ckpt {
                Some(c) => c.config.model_config(),
                None => read_toml::<TrainConfig>(train_config.as_deref())?.model_config(),
            };
            let mut clf = build_classifier(&model, ckpt.as_ref().map(|c| &c.state.params), mode, labels.num_classes(), &cfg)?;
            let losses = clf.train(&data, &labels, &cfg)?;
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                log::info!("cross-entropy {first:.4} -> {last:.4}");
            }
            clf.save(&out)?;
        }
        Command::Evaluate {
            clf,
            data,
            labels,
            report,
        } => {
            let clf = Classifier::load(&clf)?;
            let data = load_processed(&data)?;
            let labels = labels_or_stored(&data, labels.as_deref())?;
            let r = clf.evaluate(&data, &labels)?;
            fs::write(&report, r.to_json()?).with_context(|| format!("writing {}", report.display()))?;
            println!("macro F1 {:.4}", r.macro_f1);
        }
        Command::Experiment {
            plan,
            data,
            split_seed,
            out,
        } => {
            let plan = match plan {
                Some(p) => ExperimentPlan::from_toml(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => ExperimentPlan::default(),
            };
            let data = load_processed(&data)?;
            let (train, test) = split_dataset(&data, split_seed)?;
            let table = run_experiment(&plan, &train, &test)?;
            table.write(&out)?;
            print!("{}", table.render());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
