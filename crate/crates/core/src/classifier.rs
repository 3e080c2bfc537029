//! Supervised classifiers on top of the encoder: trained from scratch, with a
//! frozen pretrained encoder, or with a finetuned pretrained encoder.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{class_name, Dataset, LabelStore};
use crate::error::{Error, Result};
use crate::model::{Batch, Encoder, ModelConfig};
use crate::nn::ops::{relu_backward_inplace, relu_inplace};
use crate::nn::{Adam, AdamState, Linear, ParamEntry, ParamStore};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    Scratch,
    EncFixed,
    EncUpd,
}

impl ClassifierMode {
    pub const ALL: [ClassifierMode; 3] = [ClassifierMode::Scratch, ClassifierMode::EncFixed, ClassifierMode::EncUpd];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierMode::Scratch => "scratch",
            ClassifierMode::EncFixed => "enc_fixed",
            ClassifierMode::EncUpd => "enc_upd",
        }
    }
}

impl fmt::Display for ClassifierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown classifier mode `{s}`")))
    }
}

/// Parameters shared between the autoencoder and the classifier.
fn is_encoder_param(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("combine.")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Upper bound on the batch size; the effective size is `min(this, labeled count)`.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 50,
            learning_rate: 0.001,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Longer schedule for the desk experiment, where 40 seed labels give
    /// a single optimizer step per epoch at the default batch size.
    pub fn desk() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub mode: ClassifierMode,
    pub model: ModelConfig,
    pub num_classes: usize,
    pub params: ParamStore,
    encoder: Encoder,
    fc1: Linear,
    fc2: Linear,
    frozen: Vec<bool>,
}

/// Encoder plus a two-layer head `d -> hidden -> classes`. Pretrained
/// weights are required for the encoder-based modes and refused for scratch.
pub fn build_classifier(
    model: &ModelConfig,
    pretrained: Option<&ParamStore>,
    mode: ClassifierMode,
    num_classes: usize,
    config: &ClassifierConfig,
) -> Result<Classifier> {
    match (mode, pretrained) {
        (ClassifierMode::Scratch, Some(_)) => {
            return Err(Error::ModeMismatch {
                mode: mode.to_string(),
                reason: "does not accept pretrained weights".into(),
            })
        }
        (ClassifierMode::EncFixed | ClassifierMode::EncUpd, None) => {
            return Err(Error::ModeMismatch {
                mode: mode.to_string(),
                reason: "requires pretrained weights".into(),
            })
        }
        _ => {}
    }
    if num_classes < 2 || config.hidden == 0 {
        return Err(Error::InvalidConfig("classifier needs at least 2 classes and a positive hidden width".into()));
    }
    let mut rng = rng_for(config.seed, &[stream::CLASSIFIER]);
    let mut params = ParamStore::new();
    let encoder = Encoder::new(model, &mut params, &mut rng)?;
    let fc1 = Linear::new(&mut params, "head.fc1", model.embed_dim, config.hidden, &mut rng);
    let fc2 = Linear::new(&mut params, "head.fc2", config.hidden, num_classes, &mut rng);
    if let Some(src) = pretrained {
        let copied = params.copy_matching(src, is_encoder_param);
        let expected = params.entries().iter().filter(|e| is_encoder_param(&e.name)).count();
        if copied.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "pretrained weights cover {} of {expected} encoder tensors",
                copied.len()
            )));
        }
    }
    let frozen = if mode == ClassifierMode::EncFixed {
        params.mask_where(is_encoder_param)
    } else {
        vec![false; params.len()]
    };
    Ok(Classifier {
        mode,
        model: model.clone(),
        num_classes,
        params,
        encoder,
        fc1,
        fc2,
        frozen,
    })
}

struct HeadTrace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn softmax_cross_entropy(logits: &[f64], targets: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = targets.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (b, &t) in targets.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[t];
        for c in 0..classes {
            let p = (row[c] - max).exp() / z;
            grad[b * classes + c] = (p - if c == t { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    /// `true` for every coordinate the optimizer must not touch.
    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn head_entries(&self) -> impl Iterator<Item = &ParamEntry> {
        self.params.entries().iter().filter(|e| !is_encoder_param(&e.name))
    }

    fn head_forward(&self, params: &[f64], latent: &[f64], n: usize) -> HeadTrace {
        let mut hidden = self.fc1.forward(params, latent, n);
        relu_inplace(&mut hidden);
        let logits = self.fc2.forward(params, &hidden, n);
        HeadTrace { hidden, logits }
    }

    fn head_backward(&self, params: &[f64], grads: &mut [f64], latent: &[f64], trace: &HeadTrace, dlogits: &[f64], n: usize) -> Vec<f64> {
        let mut dh = self.fc2.backward(params, grads, &trace.hidden, dlogits, n);
        relu_backward_inplace(&trace.hidden, &mut dh);
        self.fc1.backward(params, grads, latent, &dh, n)
    }

    /// Class scores for the entities at `indices`.
    pub fn scores(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.model.check_dataset(data)?;
        let params = self.params.values();
        let latent = self.encoder.embed(params, data, indices, 64).concat();
        let trace = self.head_forward(params, &latent, indices.len());
        Ok(trace.logits.chunks_exact(self.num_classes).map(<[f64]>::to_vec).collect())
    }

    pub fn predict(&self, data: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
        Ok(self.scores(data, indices)?.iter().map(|s| argmax(s)).collect())
    }

    /// Cross-entropy training on the labeled entities of `data` found in
    /// `labels`. Returns the mean loss of each epoch.
    pub fn train(&mut self, data: &Dataset, labels: &LabelStore, config: &ClassifierConfig) -> Result<Vec<f64>> {
        self.model.check_dataset(data)?;
        if labels.num_classes() != self.num_classes {
            return Err(Error::InvalidLabels(format!(
                "label store has {} classes, classifier has {}",
                labels.num_classes(),
                self.num_classes
            )));
        }
        let mut rows = Vec::with_capacity(labels.len());
        let mut targets = Vec::with_capacity(labels.len());
        for (id, class, _) in labels.iter() {
            let pos = data.position(id).ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
            rows.push(pos);
            targets.push(class);
        }
        let counts = labels.class_counts();
        if let Some(c) = counts.iter().position(|n| *n == 0) {
            return Err(Error::InvalidLabels(format!("class {} has no labeled entities", class_name(c))));
        }
        let n = rows.len();
        let batch_size = config.batch_size.max(1).min(n);
        let adam = Adam::new(config.learning_rate);
        let mut opt = AdamState::new(self.params.len());
        let d = self.model.embed_dim;
        // A frozen encoder gives the same embedding every epoch.
        let cached: Option<Vec<f64>> = (self.mode == ClassifierMode::EncFixed)
            .then(|| self.encoder.embed(self.params.values(), data, &rows, 64).concat());
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng_for(config.seed, &[stream::CLASSIFIER, epoch as u64 + 1]));
            let mut total = 0.0;
            for (b, chunk) in order.chunks(batch_size).enumerate() {
                let m = chunk.len();
                let y: Vec<usize> = chunk.iter().map(|&k| targets[k]).collect();
                let params = self.params.values();
                let mut grads = self.params.zeros_like();
                let loss = if let Some(cache) = &cached {
                    let latent: Vec<f64> = chunk.iter().flat_map(|&k| cache[k * d..(k + 1) * d].iter().copied()).collect();
                    let trace = self.head_forward(params, &latent, m);
                    let (loss, dlogits) = softmax_cross_entropy(&trace.logits, &y, self.num_classes);
                    self.head_backward(params, &mut grads, &latent, &trace, &dlogits, m);
                    loss
                } else {
                    let idx: Vec<usize> = chunk.iter().map(|&k| rows[k]).collect();
                    let enc = self.encoder.forward(params, &Batch::gather(data, &idx));
                    let trace = self.head_forward(params, enc.latent(), m);
                    let (loss, dlogits) = softmax_cross_entropy(&trace.logits, &y, self.num_classes);
                    let dlatent = self.head_backward(params, &mut grads, enc.latent(), &trace, &dlogits, m);
                    self.encoder.backward(params, &mut grads, &enc, &dlatent, m);
                    loss
                };
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch: epoch + 1, batch: b });
                }
                adam.step(&mut opt, self.params.values_mut(), &grads, Some(&self.frozen));
                total += loss * m as f64;
            }
            history.push(total / n as f64);
        }
        Ok(history)
    }

    pub fn evaluate(&self, test: &Dataset, labels: &LabelStore) -> Result<EvalReport> {
        let mut truth = Vec::with_capacity(test.len());
        for e in test.entities() {
            truth.push(labels.class_of(&e.id).ok_or_else(|| Error::InvalidLabels(format!("test entity `{}` is unlabeled", e.id)))?);
        }
        let indices: Vec<usize> = (0..test.len()).collect();
        let predicted = self.predict(test, &indices)?;
        Ok(EvalReport::from_predictions(&truth, &predicted, self.num_classes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ClassifierHeader {
            kind: CLASSIFIER_KIND.into(),
            mode: self.mode,
            model: self.model.clone(),
            num_classes: self.num_classes,
            hidden: self.fc1.out_dim,
            entries: self.params.entries().to_vec(),
        };
        checkpoint::write_file(path, &header, &[self.params.values()])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays): (ClassifierHeader, _) = checkpoint::read_file(path)?;
        let bad = |r: &str| Error::format("classifier", path, r);
        if header.kind != CLASSIFIER_KIND {
            return Err(bad("not a classifier file"));
        }
        let [values]: [Vec<f64>; 1] = arrays.try_into().map_err(|_| bad("expected 1 array"))?;
        let params = ParamStore::from_parts(header.entries, values).map_err(|e| bad(&e))?;
        let cfg = ClassifierConfig {
            hidden: header.hidden,
            ..ClassifierConfig::default()
        };
        let mut clf = build_classifier(&header.model, None, ClassifierMode::Scratch, header.num_classes, &cfg)?;
        if clf.params.entries() != params.entries() {
            return Err(bad("parameter layout does not match the header"));
        }
        clf.params = params;
        clf.mode = header.mode;
        Ok(clf)
    }
}

const CLASSIFIER_KIND: &str = "classifier";

#[derive(Serialize, Deserialize)]
struct ClassifierHeader {
    kind: String,
    mode: ClassifierMode,
    model: ModelConfig,
    num_classes: usize,
    hidden: usize,
    entries: Vec<ParamEntry>,
}

/// Per-class and macro F1 plus the confusion matrix (rows: true class,
/// columns: predicted class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let c = confusion.len();
        let per_class_f1: Vec<f64> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let predicted: usize = confusion.iter().map(|row| row[k]).sum();
                let actual: usize = confusion[k].iter().sum();
                let denom = (predicted + actual) as f64;
                // 2PR/(P+R) simplifies to 2TP/(predicted + actual); 0/0 counts as 0.
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect();
        let macro_f1 = if c == 0 { 0.0 } else { per_class_f1.iter().sum::<f64>() / c as f64 };
        Self {
            classes: (0..c).map(class_name).collect(),
            per_class_f1,
            macro_f1,
            confusion,
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Self {
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[*t][*p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Provenance, SynthConfig};
    use crate::model::Autoencoder;

    fn model_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            image_size: 64,
            series_len: 12,
            spatial_channels: vec![2, 2, 2, 2],
            ..ModelConfig::default()
        }
    }

    fn data() -> Dataset {
        generate_synthetic(
            &SynthConfig {
                frames: 12,
                ..SynthConfig::balanced(6)
            },
            2,
        )
        .unwrap()
    }

    fn pretrained() -> ParamStore {
        Autoencoder::new(model_config(), &mut rng_for(9, &[])).unwrap().params
    }

    #[test]
    fn f1_from_confusion() {
        let r = EvalReport::from_confusion(vec![vec![2, 1], vec![0, 3]]);
        assert!((r.per_class_f1[0] - 0.8).abs() < 1e-12);
        assert!((r.per_class_f1[1] - 6.0 / 7.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.828_571_428_571).abs() < 1e-9);
        let perfect = EvalReport::from_predictions(&[0, 1, 2, 3], &[0, 1, 2, 3], 4);
        assert_eq!(perfect.per_class_f1, vec![1.0; 4]);
        let never = EvalReport::from_predictions(&[0, 1, 1], &[1, 1, 1], 3);
        assert_eq!(never.per_class_f1[0], 0.0);
        assert_eq!(never.per_class_f1[2], 0.0);
    }

    #[test]
    fn mode_preconditions_and_masks() {
        let cfg = ClassifierConfig::default();
        let pre = pretrained();
        assert!(matches!(
            build_classifier(&model_config(), Some(&pre), ClassifierMode::Scratch, 4, &cfg),
            Err(Error::ModeMismatch { .. })
        ));
        assert!(build_classifier(&model_config(), None, ClassifierMode::EncUpd, 4, &cfg).is_err());
        let fixed = build_classifier(&model_config(), Some(&pre), ClassifierMode::EncFixed, 4, &cfg).unwrap();
        for e in fixed.params.entries() {
            let frozen = &fixed.frozen_mask()[e.offset..e.offset + e.len];
            assert_eq!(frozen.iter().all(|f| *f), !e.name.starts_with("head."));
        }
        let upd = build_classifier(&model_config(), Some(&pre), ClassifierMode::EncUpd, 4, &cfg).unwrap();
        assert!(upd.frozen_mask().iter().all(|f| !f));
        assert_eq!(upd.params.tensor("encoder.temporal.fwd.w_ih"), pre.tensor("encoder.temporal.fwd.w_ih"));
    }

    #[test]
    fn enc_fixed_keeps_encoder_bits_and_learns() {
        let data = data();
        let cfg = ClassifierConfig {
            epochs: 30,
            ..ClassifierConfig::default()
        };
        let mut clf = build_classifier(&model_config(), Some(&pretrained()), ClassifierMode::EncFixed, 4, &cfg).unwrap();
        let before = clf.params.clone();
        let losses = clf.train(&data, data.labels(), &cfg).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        for e in before.entries() {
            let same = before.tensor(&e.name) == clf.params.tensor(&e.name);
            assert_eq!(same, is_encoder_param(&e.name), "{}", e.name);
        }
    }

    #[test]
    fn missing_class_is_rejected() {
        let data = data();
        let mut labels = LabelStore::new(4);
        for (id, c, _) in data.labels().iter().filter(|(_, c, _)| *c != 3) {
            labels.insert(id, c, Provenance::Seed).unwrap();
        }
        let cfg = ClassifierConfig::default();
        let mut clf = build_classifier(&model_config(), None, ClassifierMode::Scratch, 4, &cfg).unwrap();
        assert!(matches!(clf.train(&data, &labels, &cfg), Err(Error::InvalidLabels(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.bin");
        let clf = build_classifier(&model_config(), Some(&pretrained()), ClassifierMode::EncUpd, 4, &ClassifierConfig::default()).unwrap();
        clf.save(&path).unwrap();
        let back = Classifier::load(&path).unwrap();
        assert_eq!(back.params, clf.params);
        assert_eq!(back.mode, ClassifierMode::EncUpd);
        let data = data();
        let idx: Vec<usize> = (0..data.len()).collect();
        assert_eq!(back.predict(&data, &idx).unwrap(), clf.predict(&data, &idx).unwrap());
    }
}
