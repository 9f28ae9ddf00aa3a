//! Manifest records to split, whitened, balanced patch sets.

use serde::{Deserialize, Serialize};

use super::balance::balance;
use super::manifest::{DatasetTag, ImageRecord, Subset};
use super::patch::{extract_all, Patch};
use super::split::{split, SplitManifest};
use super::whiten::{compute_whitening_stats, StatsScope, WhiteningStats};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub patch_edge: usize,
    pub max_overlap: usize,
    pub split_ratio: f64,
    /// Per-class training-split target; `None` keeps the natural counts.
    pub balance_per_class: Option<usize>,
}

impl PipelineConfig {
    /// Full-size setting: 256-pixel patches, 20-pixel overlap, 80/20 split,
    /// 2,000 balanced training patches per class.
    pub fn full_size() -> Self {
        Self { patch_edge: 256, max_overlap: 20, split_ratio: 0.8, balance_per_class: Some(2000) }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: DatasetTag,
    pub subset: Subset,
    pub class_keys: Vec<String>,
    pub train: Vec<Patch>,
    pub test: Vec<Patch>,
    pub stats: WhiteningStats,
    pub split: SplitManifest,
    pub warnings: Vec<String>,
}

impl PreparedData {
    pub fn label_of(&self, patch: &Patch) -> Result<usize> {
        self.class_keys
            .iter()
            .position(|k| k == &patch.class_key)
            .ok_or_else(|| Error::Data(format!("patch {} has class {} outside {:?}", patch.patch_id, patch.class_key, self.class_keys)))
    }
}

/// Filters to `subset`, extracts patches, splits by fragment,
/// balances the training split and computes whitening statistics on it.
pub fn prepare(records: &[ImageRecord], subset: Subset, cfg: &PipelineConfig, seed: u64) -> Result<PreparedData> {
    let chosen: Vec<ImageRecord> = records.iter().filter(|r| subset.contains(r.view)).cloned().collect();
    let dataset = match chosen.first() {
        Some(r) => r.dataset,
        None => return Err(Error::Data(format!("no {subset} images to prepare"))),
    };
    if let Some(r) = chosen.iter().find(|r| r.dataset != dataset) {
        return Err(Error::Data(format!("mixed datasets in one preparation: {} is {}", r.image_id, r.dataset)));
    }
    let extraction = extract_all(&chosen, cfg.patch_edge, cfg.max_overlap)?;
    let mut warnings = extraction.warnings;
    let manifest = split(&extraction.patches, cfg.split_ratio, rng::derive_seed(seed, "split"))?;
    warnings.extend(manifest.warnings.iter().cloned());
    let (train, test) = manifest.partition(&extraction.patches)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "split left {} train and {} test patches; need both non-empty",
            train.len(),
            test.len()
        )));
    }
    let class_keys = dataset.class_keys();
    let train = match cfg.balance_per_class {
        Some(target) => balance(&train, &class_keys, target, &mut rng::stream(seed, "balance"))?,
        None => train,
    };
    // Statistics of the split actually trained on, after balancing.
    let stats = compute_whitening_stats(&train, StatsScope { dataset, split: format!("train/{subset}") })?;
    Ok(PreparedData { dataset, subset, class_keys, train, test, stats, split: manifest, warnings })
}
