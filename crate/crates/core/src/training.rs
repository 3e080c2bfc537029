//! Two-phase autoencoder training: reconstruction only up to the onset
//! epoch, then reconstruction plus the constrained loss over balanced
//! same-class pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{Dataset, LabelStore};
use crate::error::{Error, Result};
use crate::losses::{constrained_loss, reconstruction_loss, total_loss, LossReport, LossWeights, Phase};
use crate::model::{Autoencoder, Batch, ModelConfig, Modalities, NORM_EPS};
use crate::nn::ops::norm2;
use crate::nn::{Adam, AdamState, ParamEntry, ParamStore};
use crate::rng::{derive_seed, rng_for, stream};
use crate::sampling::{form_pairs, make_batches, oversample_labeled};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    SpatialOnly,
    TemporalOnly,
    NoConstraint,
}

impl Ablation {
    pub fn modalities(self) -> Modalities {
        match self {
            Ablation::SpatialOnly => Modalities::SpatialOnly,
            Ablation::TemporalOnly => Modalities::TemporalOnly,
            Ablation::Full | Ablation::NoConstraint => Modalities::Both,
        }
    }

    pub fn constrained(self) -> bool {
        self == Ablation::Full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Last reconstruction-only epoch; `None` means `epochs / 2`.
    pub constrained_onset: Option<usize>,
    pub weights: LossWeights,
    pub seed: u64,
    pub ablation: Ablation,
    /// Inject labeled entities into constrained-phase batches so each class
    /// has at least `min_labeled_per_class` members.
    pub oversample: bool,
    pub min_labeled_per_class: usize,
    /// Feed true previous values to the series decoder during training.
    pub teacher_forcing: bool,
    /// `None` means every `max(1, epochs / 20)` epochs.
    pub checkpoint_every: Option<usize>,
    /// Architecture; `modalities` is overridden by `ablation`.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 256,
            learning_rate: 0.001,
            constrained_onset: None,
            weights: LossWeights::default(),
            seed: 0,
            ablation: Ablation::Full,
            oversample: true,
            min_labeled_per_class: 2,
            teacher_forcing: false,
            checkpoint_every: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced schedule for quick synthetic runs.
    pub fn desk() -> Self {
        Self {
            epochs: 200,
            constrained_onset: Some(100),
            batch_size: 64,
            model: ModelConfig {
                embed_dim: 32,
                series_len: 48,
                spatial_channels: vec![4, 8, 16, 16],
                ..ModelConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn onset(&self) -> usize {
        self.constrained_onset.unwrap_or(self.epochs / 2)
    }

    pub fn checkpoint_interval(&self) -> usize {
        self.checkpoint_every.unwrap_or(self.epochs / 20).max(1)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            modalities: self.ablation.modalities(),
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.onset() > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "constrained_onset {} exceeds epochs {}",
                self.onset(),
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        self.weights.validate()?;
        self.model_config().validate()
    }

    fn constrained_phase_runs(&self) -> bool {
        self.ablation.constrained() && self.onset() < self.epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Batch means of each term; `pair_count` is the epoch total.
    pub losses: LossReport,
}

/// Everything needed to resume training bit-exactly. Random streams are
/// derived from `(seed, epoch, batch)`, so the seed is the RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: AdamState,
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    config: TrainConfig,
    epoch: usize,
    adam_step: u64,
    entries: Vec<ParamEntry>,
    history: Vec<EpochMetrics>,
}

const CHECKPOINT_KIND: &str = "autoencoder";

impl Checkpoint {
    pub fn model(&self) -> Result<Autoencoder> {
        Autoencoder::from_params(self.config.model_config(), self.state.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (header, arrays) = self.parts();
        checkpoint::encode(&header, &arrays)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        Self::from_parts(checkpoint::decode(bytes, path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (header, arrays) = self.parts();
        checkpoint::write_file(path, &header, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_parts(checkpoint::read_file(path)?, path)
    }

    fn parts(&self) -> (CheckpointHeader, [&[f64]; 3]) {
        let s = &self.state;
        (
            CheckpointHeader {
                kind: CHECKPOINT_KIND.into(),
                config: self.config.clone(),
                epoch: s.epoch,
                adam_step: s.optimizer.step,
                entries: s.params.entries().to_vec(),
                history: s.history.clone(),
            },
            [s.params.values(), &s.optimizer.m, &s.optimizer.v],
        )
    }

    fn from_parts((header, arrays): (CheckpointHeader, Vec<Vec<f64>>), path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format("checkpoint", path, reason);
        if header.kind != CHECKPOINT_KIND {
            return Err(bad("not an autoencoder checkpoint"));
        }
        let [values, m, v]: [Vec<f64>; 3] = arrays.try_into().map_err(|_| bad("expected 3 arrays"))?;
        if m.len() != values.len() || v.len() != values.len() {
            return Err(bad("optimizer moments do not match parameters"));
        }
        let params = ParamStore::from_parts(header.entries, values).map_err(|e| bad(&e))?;
        let ckpt = Checkpoint {
            config: header.config,
            state: TrainState {
                epoch: header.epoch,
                params,
                optimizer: AdamState {
                    step: header.adam_step,
                    m,
                    v,
                },
                history: header.history,
            },
        };
        ckpt.model()?;
        Ok(ckpt)
    }
}

/// Stateful training loop over a fixed dataset and label store.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a Dataset,
    model: Autoencoder,
    state: TrainState,
    row_class: Vec<Option<usize>>,
    labeled_by_class: Vec<Vec<usize>>,
    num_classes: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset, labels: &LabelStore) -> Result<Self> {
        config.validate()?;
        let model = Autoencoder::new(config.model_config(), &mut rng_for(config.seed, &[stream::INIT]))?;
        let state = TrainState {
            epoch: 0,
            optimizer: AdamState::new(model.params.len()),
            params: model.params.clone(),
            history: Vec::new(),
        };
        Self::assemble(config, data, labels, model, state)
    }

    pub fn resume(ckpt: Checkpoint, data: &'a Dataset, labels: &LabelStore) -> Result<Self> {
        ckpt.config.validate()?;
        let model = ckpt.model()?;
        Self::assemble(ckpt.config, data, labels, model, ckpt.state)
    }

    fn assemble(config: TrainConfig, data: &'a Dataset, labels: &LabelStore, model: Autoencoder, state: TrainState) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        config.model_config().check_dataset(data)?;
        let num_classes = labels.num_classes();
        let row_class = data.class_vector(labels);
        let mut labeled_by_class = vec![Vec::new(); num_classes];
        for (i, c) in row_class.iter().enumerate() {
            if let Some(c) = c {
                labeled_by_class[*c].push(i);
            }
        }
        if config.constrained_phase_runs() && labeled_by_class.iter().all(|v| v.len() < 2) {
            return Err(Error::InvalidLabels(
                "the constrained phase needs at least one class with two labeled training entities".into(),
            ));
        }
        Ok(Self {
            config,
            data,
            model,
            state,
            row_class,
            labeled_by_class,
            num_classes,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// Switches the ablation for the remaining epochs, e.g. to fork a
    /// constrained and an unconstrained run after a shared first phase.
    pub fn set_ablation(&mut self, ablation: Ablation) -> Result<()> {
        if ablation.modalities() != self.config.ablation.modalities() {
            return Err(Error::InvalidConfig("cannot switch modalities of a running model".into()));
        }
        self.config.ablation = ablation;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    /// Runs one epoch and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.state.epoch + 1;
        let cfg = &self.config;
        let phase = Phase::for_epoch(epoch, cfg.onset());
        let constrained = cfg.ablation.constrained() && phase == Phase::Constrained;
        let effective = if constrained { Phase::Constrained } else { Phase::Reconstruction };
        let adam = Adam::new(cfg.learning_rate);
        let d = self.model.config.embed_dim;
        let batches = make_batches(self.data.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut sum = LossReport::default();
        for (b, mut rows) in batches.into_iter().enumerate() {
            let batch_seed = derive_seed(cfg.seed, &[epoch as u64, b as u64]);
            if constrained && cfg.oversample {
                oversample_labeled(&mut rows, &self.labeled_by_class, cfg.min_labeled_per_class, batch_seed);
            }
            let batch = Batch::gather(self.data, &rows);
            let n = batch.size;
            let params = self.state.params.values();
            let trace = self.model.forward_with(params, &batch, cfg.teacher_forcing);
            let mut report = LossReport::default();
            let mut ds = None;
            if let Some(r) = trace.recon_spatial() {
                let (l, mut g) = reconstruction_loss(&batch.maps, r, n)?;
                g.iter_mut().for_each(|v| *v *= cfg.weights.spatial);
                report.rec_spatial = l;
                ds = Some(g);
            }
            let mut dt = None;
            if let Some(r) = trace.recon_temporal() {
                let (l, mut g) = reconstruction_loss(&batch.series, r, n)?;
                g.iter_mut().for_each(|v| *v *= cfg.weights.temporal);
                report.rec_temporal = l;
                dt = Some(g);
            }
            let mut dlatent = None;
            if constrained {
                let latent = trace.latent();
                // Rows whose latent is exactly zero cannot form a cosine.
                let labels: Vec<Option<usize>> = rows
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| self.row_class[i].filter(|_| norm2(&latent[k * d..(k + 1) * d]) >= NORM_EPS))
                    .collect();
                let pairs = form_pairs(&labels, self.num_classes, batch_seed);
                let (l, g) = constrained_loss(latent, d, &pairs)?;
                report.constrained = l;
                report.pair_count = pairs.len();
                dlatent = Some(g);
            }
            report.total = total_loss(report.rec_spatial, report.rec_temporal, report.constrained, &cfg.weights, effective);
            if !report.total.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            let mut grads = self.state.params.zeros_like();
            self.model
                .backward(params, &mut grads, &trace, ds.as_deref(), dt.as_deref(), dlatent.as_deref(), n);
            adam.step(&mut self.state.optimizer, self.state.params.values_mut(), &grads, None);
            if !self.state.params.all_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            sum.rec_spatial += report.rec_spatial;
            sum.rec_temporal += report.rec_temporal;
            sum.constrained += report.constrained;
            sum.total += report.total;
            sum.pair_count += report.pair_count;
        }
        let nb = self.data.len().div_ceil(cfg.batch_size) as f64;
        let metrics = EpochMetrics {
            epoch,
            losses: LossReport {
                rec_spatial: sum.rec_spatial / nb,
                rec_temporal: sum.rec_temporal / nb,
                constrained: sum.constrained / nb,
                total: sum.total / nb,
                pair_count: sum.pair_count,
            },
        };
        self.state.epoch = epoch;
        self.state.history.push(metrics);
        self.model.params.values_mut().copy_from_slice(self.state.params.values());
        log::debug!(
            "epoch {epoch}: rec_s={:.5} rec_t={:.5} con={:.5} total={:.5} pairs={}",
            metrics.losses.rec_spatial,
            metrics.losses.rec_temporal,
            metrics.losses.constrained,
            metrics.losses.total,
            metrics.losses.pair_count
        );
        Ok(metrics)
    }

    /// Runs epochs until `epoch` (capped at the configured total), calling
    /// `on_epoch` after each.
    pub fn run_until(&mut self, epoch: usize, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.state.epoch < epoch.min(self.config.epochs) {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }
}

/// Full training run from a fresh initialisation.
pub fn train_autoencoder(train: &Dataset, labels: &LabelStore, config: &TrainConfig) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config.clone(), train, labels)?;
    trainer.run_until(config.epochs, |_| Ok(()))?;
    Ok(trainer.checkpoint())
}

/// Sidecar metrics log path for a checkpoint path.
pub fn metrics_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".metrics.tsv");
    PathBuf::from(s)
}

pub fn format_metrics(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch\trec_spatial\trec_temporal\tconstrained\ttotal\tpair_count\n");
    for m in history {
        let l = &m.losses;
        let _ = writeln!(
            out,
            "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{}",
            m.epoch, l.rec_spatial, l.rec_temporal, l.constrained, l.total, l.pair_count
        );
    }
    out
}

pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    fs::write(path, format_metrics(history)).map_err(|e| Error::io(path, e))
}

/// Training with periodic checkpoints to `out` and a metrics log beside it.
/// An existing checkpoint at `out` with the same configuration is resumed.
pub fn train_to_file(train: &Dataset, labels: &LabelStore, config: &TrainConfig, out: &Path) -> Result<Checkpoint> {
    let mut trainer = match Checkpoint::load(out) {
        Ok(ckpt) if ckpt.config == *config => {
            log::info!("resuming {} at epoch {}", out.display(), ckpt.state.epoch);
            Trainer::resume(ckpt, train, labels)?
        }
        _ => Trainer::new(config.clone(), train, labels)?,
    };
    let every = config.checkpoint_interval();
    let log_path = metrics_path(out);
    trainer.run_until(config.epochs, |t| {
        let e = t.state().epoch;
        if e % every == 0 || t.is_done() {
            t.checkpoint().save(out)?;
            write_metrics(&log_path, &t.state().history)?;
            log::info!("epoch {e}: checkpoint written");
        }
        Ok(())
    })?;
    let ckpt = trainer.checkpoint();
    ckpt.save(out)?;
    write_metrics(&log_path, &ckpt.state.history)?;
    Ok(ckpt)
}

/// Reconstruction losses of a model over a whole dataset, without teacher
/// forcing, averaged per entity.
pub fn evaluate_losses(model: &Autoencoder, data: &Dataset, weights: &LossWeights, chunk: usize) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.config.check_dataset(data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut report = LossReport::default();
    for part in indices.chunks(chunk.max(1)) {
        let batch = Batch::gather(data, part);
        let trace = model.forward(&batch, false);
        let w = part.len() as f64 / data.len() as f64;
        if let Some(r) = trace.recon_spatial() {
            report.rec_spatial += w * reconstruction_loss(&batch.maps, r, batch.size)?.0;
        }
        if let Some(r) = trace.recon_temporal() {
            report.rec_temporal += w * reconstruction_loss(&batch.series, r, batch.size)?.0;
        }
    }
    report.total = total_loss(report.rec_spatial, report.rec_temporal, 0.0, weights, Phase::Reconstruction);
    Ok(report)
}

/// Entity ids with their latent embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

pub fn extract_embeddings(ckpt: &Checkpoint, data: &Dataset) -> Result<Embeddings> {
    let model = ckpt.model()?;
    model.config.check_dataset(data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    Ok(Embeddings {
        ids: data.entities().iter().map(|e| e.id.clone()).collect(),
        dim: model.config.embed_dim,
        rows: model.encoder.embed(model.params.values(), data, &indices, 64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            seed: 3,
            model: ModelConfig {
                embed_dim: 8,
                image_size: 64,
                series_len: 12,
                spatial_channels: vec![2, 2, 2, 2],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Dataset {
        let cfg = SynthConfig {
            frames: 12,
            ..SynthConfig::balanced(10)
        };
        generate_synthetic(&cfg, 1).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(4);
        cfg.constrained_onset = Some(5);
        assert!(cfg.validate().is_err());
        cfg.constrained_onset = Some(4);
        assert!(cfg.validate().is_ok());
        cfg.epochs = 0;
        cfg.constrained_onset = None;
        assert!(cfg.validate().is_err());
        assert_eq!(TrainConfig::default().onset(), 1000);
        assert_eq!(TrainConfig::default().checkpoint_interval(), 100);
        assert_eq!(tiny_config(7).checkpoint_interval(), 1);
    }

    #[test]
    fn phase_contract_and_smoke() {
        let data = tiny_data();
        let cfg = tiny_config(4);
        let ckpt = train_autoencoder(&data, data.labels(), &cfg).unwrap();
        let h = &ckpt.state.history;
        assert_eq!(h.len(), 4);
        for m in h {
            if m.epoch <= 2 {
                assert_eq!(m.losses.constrained, 0.0);
                assert_eq!(m.losses.pair_count, 0);
            } else {
                assert!(m.losses.pair_count > 0);
            }
        }
        let log = format_metrics(h);
        assert_eq!(log.lines().count(), 5);
    }

    #[test]
    fn needs_labels_for_constrained_phase() {
        let data = tiny_data();
        let err = Trainer::new(tiny_config(2), &data, &LabelStore::default());
        assert!(matches!(err, Err(Error::InvalidLabels(_))));
        let mut cfg = tiny_config(2);
        cfg.ablation = Ablation::NoConstraint;
        assert!(Trainer::new(cfg, &data, &LabelStore::default()).is_ok());
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let data = tiny_data();
        let ckpt = train_autoencoder(&data, data.labels(), &tiny_config(1)).unwrap();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn fork_equals_direct_run() {
        let data = tiny_data();
        let cfg = tiny_config(4);
        let direct = train_autoencoder(&data, data.labels(), &cfg).unwrap();
        let mut shared = Trainer::new(
            TrainConfig {
                ablation: Ablation::NoConstraint,
                ..cfg.clone()
            },
            &data,
            data.labels(),
        )
        .unwrap();
        shared.run_until(cfg.onset(), |_| Ok(())).unwrap();
        shared.set_ablation(Ablation::Full).unwrap();
        shared.run_until(cfg.epochs, |_| Ok(())).unwrap();
        assert_eq!(shared.checkpoint(), direct);
    }
}
