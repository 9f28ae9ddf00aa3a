//! Mini-batch SGD training loop, evaluation and predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use super::config::TrainConfig;
use crate::data::{augment, AugmentConfig, AugmentPolicy, Patch, View, WhiteningStats};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, softmax_cross_entropy, Mode, Model};
use crate::nn::loss::softmax_rows;
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Whitened CHW samples with labels and provenance.
#[derive(Debug, Clone)]
pub struct TensorSet<T> {
    pub edge: usize,
    pub data: Vec<T>,
    pub labels: Vec<usize>,
    pub patch_ids: Vec<String>,
    pub image_ids: Vec<String>,
    pub fragment_ids: Vec<String>,
    pub class_keys: Vec<String>,
    pub views: Vec<View>,
    /// Class key predicted by each output index.
    pub head_keys: Vec<String>,
}

impl<T: Scalar> TensorSet<T> {
    /// `head_keys[i]` is the class key that output index `i` predicts.
    pub fn from_patches(patches: &[Patch], stats: &WhiteningStats, head_keys: &[String]) -> Result<Self> {
        let edge = patches.first().map(|p| p.edge).unwrap_or(0);
        let mut set = Self {
            edge,
            data: Vec::with_capacity(patches.len() * 3 * edge * edge),
            labels: Vec::with_capacity(patches.len()),
            patch_ids: Vec::with_capacity(patches.len()),
            image_ids: Vec::with_capacity(patches.len()),
            fragment_ids: Vec::with_capacity(patches.len()),
            class_keys: Vec::with_capacity(patches.len()),
            views: Vec::with_capacity(patches.len()),
            head_keys: head_keys.to_vec(),
        };
        for p in patches {
            if p.edge != edge {
                return Err(Error::Data(format!("patch {} has edge {}, expected {edge}", p.patch_id, p.edge)));
            }
            let label = head_keys.iter().position(|k| k == &p.class_key).ok_or_else(|| {
                Error::Data(format!("patch {} has class {} outside {head_keys:?}", p.patch_id, p.class_key))
            })?;
            stats.whiten_into(p, &mut set.data)?;
            set.labels.push(label);
            set.patch_ids.push(p.patch_id.clone());
            set.image_ids.push(p.image_id.clone());
            set.fragment_ids.push(p.fragment_id.clone());
            set.class_keys.push(p.class_key.clone());
            set.views.push(p.view);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        3 * self.edge * self.edge
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor::new(vec![indices.len(), 3, self.edge, self.edge], data)
    }

    pub fn all(&self) -> Result<Tensor<T>> {
        Tensor::new(vec![self.len(), 3, self.edge, self.edge], self.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

/// Instrumentation gathered while training.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Firing counts per augmentation ("identity", "flip_h", ..., "blur").
    pub augmentations: BTreeMap<String, usize>,
    /// Every fragment whose patches were read by a training step.
    pub fragments_read: BTreeSet<String>,
}

impl TrainLog {
    pub fn blur_count(&self) -> usize {
        self.augmentations.get("blur").copied().unwrap_or(0)
    }

    pub fn write_epoch_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "test_accuracy"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                e.test_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn op_name(op: crate::data::GeometricOp) -> String {
    serde_json::to_value(op).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Trains `model` in place. Randomness comes from `cfg.seed` split into
/// `{label}/shuffle`, `{label}/augment` and `{label}/dropout` streams.
/// A trailing batch of one sample is skipped (batch norm needs two).
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &TensorSet<T>,
    test_set: Option<&TensorSet<T>>,
    cfg: &TrainConfig,
    policy: AugmentPolicy,
    augment_cfg: &AugmentConfig,
    label: &str,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Data(format!("{label}: need at least 2 training samples, got {}", train_set.len())));
    }
    let mut shuffle_rng = rng::stream(cfg.seed, &format!("{label}/shuffle"));
    let mut augment_rng = rng::stream(cfg.seed, &format!("{label}/augment"));
    let mut dropout_rng = rng::stream(cfg.seed, &format!("{label}/dropout"));
    let mut log = TrainLog::default();
    let mut read = vec![false; train_set.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (edge, n) = (train_set.edge, train_set.sample_len());
    for epoch in 1..=cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut data = Vec::with_capacity(chunk.len() * n);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                read[i] = true;
                let mut sample = train_set.sample(i).to_vec();
                let rec = augment(&mut sample, 3, edge, policy, augment_cfg, &mut augment_rng);
                if let Some(op) = rec.geometric {
                    *log.augmentations.entry(op_name(op)).or_default() += 1;
                }
                if rec.blur_sigma.is_some() {
                    *log.augmentations.entry("blur".into()).or_default() += 1;
                }
                data.extend(sample);
                labels.push(train_set.labels[i]);
            }
            let x = Tensor::new(vec![chunk.len(), 3, edge, edge], data)?;
            let logits = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() || loss > 1e6 {
                return Err(Error::Diverged { step: log.steps, loss });
            }
            let grads = model.backward(&grad)?;
            model.params.sgd_momentum_step(&grads, cfg.learning_rate, cfg.momentum)?;
            log.steps += 1;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let test_accuracy = match test_set {
            Some(t) => Some(evaluate(model, t)?.accuracy()),
            None => None,
        };
        let train_loss = loss_sum / seen.max(1) as f64;
        log::debug!("{label} epoch {epoch}: loss {train_loss:.4} test acc {test_accuracy:?}");
        log.epochs.push(EpochRecord { epoch, train_loss, test_accuracy });
    }
    log.fragments_read =
        read.iter().zip(&train_set.fragment_ids).filter(|(r, _)| **r).map(|(_, f)| f.clone()).collect();
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    pub class_keys: Vec<String>,
    pub patch_ids: Vec<String>,
    pub image_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn accuracy(&self) -> f64 {
        let hits = self.labels.iter().zip(&self.predicted).filter(|(a, b)| a == b).count();
        hits as f64 / self.labels.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["patch_id".to_string(), "true".into(), "predicted".into()];
        header.extend(self.class_keys.iter().map(|k| format!("score_{k}")));
        w.write_record(&header)?;
        for i in 0..self.labels.len() {
            let mut rec = vec![
                self.patch_ids[i].clone(),
                self.class_keys[self.labels[i]].clone(),
                self.class_keys[self.predicted[i]].clone(),
            ];
            rec.extend(self.scores[i].iter().map(|s| format!("{s:.6}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Extension beyond per-patch evaluation: one vote per image by summed
    /// patch scores. Returns `(image_id, true, voted)` sorted by image id.
    pub fn image_votes(&self) -> Vec<(String, usize, usize)> {
        let mut by_image: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
        for i in 0..self.labels.len() {
            let e = by_image
                .entry(&self.image_ids[i])
                .or_insert_with(|| (self.labels[i], vec![0.0; self.class_keys.len()]));
            for (a, s) in e.1.iter_mut().zip(&self.scores[i]) {
                *a += s;
            }
        }
        by_image
            .into_iter()
            .map(|(id, (label, sums))| {
                let voted = (0..sums.len()).fold(0, |best, k| if sums[k] > sums[best] { k } else { best });
                (id.to_string(), label, voted)
            })
            .collect()
    }
}

/// Eval-mode predictions over a whole set, in batches of 128.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, set: &TensorSet<T>) -> Result<Predictions> {
    let mut predicted = Vec::with_capacity(set.len());
    let mut scores = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(128) {
        let logits = model.logits(&set.batch(chunk)?)?;
        logits.ensure_finite("evaluate")?;
        predicted.extend(argmax_rows(&logits));
        scores.extend(softmax_rows(&logits));
    }
    if model.arch().num_classes() != set.head_keys.len() {
        return Err(Error::Config(format!(
            "model predicts {} classes, data declares {}",
            model.arch().num_classes(),
            set.head_keys.len()
        )));
    }
    Ok(Predictions {
        class_keys: set.head_keys.clone(),
        patch_ids: set.patch_ids.clone(),
        image_ids: set.image_ids.clone(),
        labels: set.labels.clone(),
        predicted,
        scores,
    })
}
