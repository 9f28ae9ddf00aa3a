use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::manifest::{DATASET_A_KEYS, DATASET_B_KEYS};
use crate::data::{AugmentConfig, AugmentPolicy, PipelineConfig};
use crate::error::{Error, Result};
use crate::nn::{ArchitectureConfig, DenseSpec};
use crate::synth::SynthSpec;
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Scratch,
    Stage0,
    Hetl,
    Hotl,
}

impl StageKind {
    pub fn tag(self) -> &'static str {
        match self {
            StageKind::Scratch => "scratch",
            StageKind::Stage0 => "stage0",
            StageKind::Hetl => "hetl",
            StageKind::Hotl => "hotl",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for StageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(StageKind::Scratch),
            "stage0" => Ok(StageKind::Stage0),
            "hetl" => Ok(StageKind::Hetl),
            "hotl" => Ok(StageKind::Hotl),
            other => Err(Error::Usage(format!("unknown stage {other:?} (scratch|stage0|hetl|hotl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl TrainConfig {
    /// First transfer step, reference setting: batch 24, SGD lr 0.001, momentum 0.9,
    /// dropout 0.5. The epoch count is not given for this step; 30 matches the
    /// second step.
    pub fn hetl_reference() -> Self {
        Self {
            batch_size: 24,
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 30,
            dropout: 0.5,
            seed: 0,
            precision: Precision::Single,
        }
    }

    /// Second transfer step, reference setting: 30 epochs, SGD lr 0.01, momentum 0.9.
    pub fn hotl_reference() -> Self {
        Self { learning_rate: 0.01, ..Self::hetl_reference() }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} must be at least 2 for batch norm", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive and momentum {} in [0, 1)",
                self.learning_rate, self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Which dataset-B class each output index of a dataset-A model stands for
/// after the second transfer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub a_to_b: BTreeMap<String, String>,
}

impl ClassMap {
    /// Index-for-index: CAR becomes WD, CAR2 becomes AU, the rest keep their key.
    pub fn positional() -> Self {
        Self {
            a_to_b: DATASET_A_KEYS.iter().zip(DATASET_B_KEYS).map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    /// Head order expressed in target keys; must be a permutation of `target_keys`.
    pub fn head_keys(&self, source_keys: &[String], target_keys: &[String]) -> Result<Vec<String>> {
        let mapped: Vec<String> = source_keys
            .iter()
            .map(|k| {
                self.a_to_b
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("class map has no entry for source key {k}")))
            })
            .collect::<Result<_>>()?;
        let mut sorted_a = mapped.clone();
        sorted_a.sort();
        let mut sorted_b = target_keys.to_vec();
        sorted_b.sort();
        if sorted_a != sorted_b {
            return Err(Error::Config(format!("class map {mapped:?} is not a permutation of {target_keys:?}")));
        }
        Ok(mapped)
    }
}

/// Everything one experiment needs; serialized as the run's config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthSpec,
    pub synth_seed: u64,
    pub pipeline: PipelineConfig,
    pub arch: ArchitectureConfig,
    pub stage0: TrainConfig,
    pub hetl: TrainConfig,
    pub hotl: TrainConfig,
    pub scratch: TrainConfig,
    pub scratch_augment: AugmentPolicy,
    pub augment: AugmentConfig,
    pub class_map: ClassMap,
}

impl ExperimentConfig {
    /// Single-CPU setting: 32-pixel patches from 64-pixel images, a
    /// three-block backbone and reduced epoch counts. Learning rates, momentum,
    /// batch size and dropout keep their reference values.
    pub fn desk() -> Self {
        Self {
            synth: SynthSpec::default(),
            synth_seed: 2024,
            pipeline: PipelineConfig { patch_edge: 32, max_overlap: 4, split_ratio: 0.8, balance_per_class: Some(160) },
            arch: ArchitectureConfig::desk(32, 6),
            stage0: TrainConfig::hetl_reference().with_epochs(6),
            hetl: TrainConfig::hetl_reference().with_epochs(6),
            hotl: TrainConfig::hotl_reference().with_epochs(6),
            scratch: TrainConfig::hetl_reference().with_epochs(6),
            scratch_augment: AugmentPolicy::GeometricBlur,
            augment: AugmentConfig::default(),
            class_map: ClassMap::positional(),
        }
    }

    /// Full-size head (768-256-128, dropout 0.5) and 30 epochs per stage on
    /// 256-pixel patches. Far beyond a single CPU; kept for reference runs.
    pub fn full_size() -> Self {
        let arch = ArchitectureConfig::desk(256, 6).with_head(ArchitectureConfig::full_head(6));
        Self {
            synth: SynthSpec { image_edge: 512, generic_edge: 256, ..SynthSpec::default() },
            pipeline: PipelineConfig::full_size(),
            arch,
            stage0: TrainConfig::hetl_reference(),
            hetl: TrainConfig::hetl_reference(),
            hotl: TrainConfig::hotl_reference(),
            scratch: TrainConfig::hetl_reference(),
            ..Self::desk()
        }
    }

    /// Seconds-scale setting for smoke tests: 16-pixel patches, four
    /// fragments per class and view, two epochs per stage.
    pub fn smoke() -> Self {
        let mut cfg = Self::desk();
        cfg.synth = SynthSpec {
            image_edge: 32,
            fragments_per_class_view: 4,
            generic_per_class: 12,
            generic_edge: 16,
            ..SynthSpec::default()
        };
        cfg.pipeline = PipelineConfig { patch_edge: 16, max_overlap: 0, split_ratio: 0.8, balance_per_class: Some(24) };
        cfg.arch = ArchitectureConfig::desk(16, 6);
        for t in [&mut cfg.stage0, &mut cfg.hetl, &mut cfg.hotl, &mut cfg.scratch] {
            t.epochs = 2;
        }
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            "full-size" => Ok(Self::full_size()),
            _ => Err(Error::Usage(format!("unknown preset {name:?} (desk|smoke|full-size)"))),
        }
    }

    /// Same backbone and hidden head layers with a logits layer sized for
    /// the generic pretraining task.
    pub fn stage0_arch(&self, classes: usize) -> ArchitectureConfig {
        let mut head = self.arch.head.clone();
        head.pop();
        head.push(DenseSpec::logits(classes));
        self.arch.clone().with_head(head)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.synth.validate()?;
        for (name, c) in [("stage0", &self.stage0), ("hetl", &self.hetl), ("hotl", &self.hotl), ("scratch", &self.scratch)] {
            c.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        if self.arch.input_edge != self.pipeline.patch_edge {
            return Err(Error::Config(format!(
                "architecture input edge {} differs from patch edge {}",
                self.arch.input_edge, self.pipeline.patch_edge
            )));
        }
        if self.synth.generic_edge != self.pipeline.patch_edge {
            return Err(Error::Config(format!(
                "generic texture edge {} differs from patch edge {}",
                self.synth.generic_edge, self.pipeline.patch_edge
            )));
        }
        if self.augment.geometric_ops.is_empty() {
            return Err(Error::Config("augmentation needs at least one geometric op".into()));
        }
        Ok(())
    }

    /// First 8 bytes of SHA-256 over the JSON form, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_presets_verbatim() {
        let h = TrainConfig::hetl_reference();
        assert_eq!((h.batch_size, h.learning_rate, h.momentum, h.dropout), (24, 0.001, 0.9, 0.5));
        let o = TrainConfig::hotl_reference();
        assert_eq!((o.learning_rate, o.epochs, o.momentum), (0.01, 30, 0.9));
    }

    #[test]
    fn positional_map() {
        let m = ClassMap::positional();
        assert_eq!(m.a_to_b["CAR"], "WD");
        assert_eq!(m.a_to_b["CAR2"], "AU");
        assert_eq!(m.a_to_b["WW"], "WW");
        let a: Vec<String> = DATASET_A_KEYS.iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = DATASET_B_KEYS.iter().map(|s| s.to_string()).collect();
        assert_eq!(m.head_keys(&a, &b).unwrap(), b);
    }

    #[test]
    fn non_permutation_map_rejected() {
        let mut m = ClassMap::positional();
        m.a_to_b.insert("CAR".into(), "WW".into());
        let a: Vec<String> = DATASET_A_KEYS.iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = DATASET_B_KEYS.iter().map(|s| s.to_string()).collect();
        assert!(m.head_keys(&a, &b).is_err());
    }

    #[test]
    fn desk_config_validates_and_roundtrips() {
        let c = ExperimentConfig::desk();
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        ExperimentConfig::full_size().validate().unwrap();
    }

    #[test]
    fn stage0_arch_shares_backbone() {
        let c = ExperimentConfig::desk();
        let s0 = c.stage0_arch(12);
        assert_eq!(s0.backbone_hash(), c.arch.backbone_hash());
        assert_eq!(s0.num_classes(), 12);
    }
}
