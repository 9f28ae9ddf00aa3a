//! Stage runners and the contracts between them.
//!
//! * scratch: seeded random init, trained on one dataset.
//! * stage0: backbone pretraining on the generic texture task.
//! * hetl: backbone copied from a stage0 checkpoint (or random), fresh head.
//! * hotl: every tensor taken unchanged from a hetl or scratch checkpoint,
//!   optimizer velocity zeroed, output indices relabeled to target keys.

use super::config::{ClassMap, StageKind, TrainConfig};
use super::trainer::{evaluate, train, Predictions, TensorSet, TrainLog};
use crate::data::{AugmentConfig, AugmentPolicy, PreparedData};
use crate::error::{Error, Result};
use crate::nn::model::BACKBONE_PREFIX;
use crate::nn::{ArchitectureConfig, Checkpoint, Model};
use crate::rng;
use crate::tensor::Scalar;

/// Train and test sets of one stage.
#[derive(Debug, Clone)]
pub struct StageData<T> {
    pub train: TensorSet<T>,
    pub test: TensorSet<T>,
}

impl<T: Scalar> StageData<T> {
    /// Whitens both splits with the training-split statistics. `head_keys`
    /// defaults to the dataset's own key order.
    pub fn from_prepared(data: &PreparedData, head_keys: Option<&[String]>) -> Result<Self> {
        let keys = head_keys.unwrap_or(&data.class_keys);
        Ok(Self {
            train: TensorSet::from_patches(&data.train, &data.stats, keys)?,
            test: TensorSet::from_patches(&data.test, &data.stats, keys)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StageOutput<T> {
    pub kind: StageKind,
    pub model: Model<T>,
    pub log: TrainLog,
    pub predictions: Predictions,
    pub checkpoint: Checkpoint<T>,
    /// Scalar parameter count right after initialization, before training.
    pub initial_parameter_count: usize,
    /// Whether every velocity tensor was zero when training started.
    pub started_with_zero_velocity: bool,
}

fn velocity_is_zero<T: Scalar>(model: &Model<T>) -> bool {
    model.params.iter().all(|(_, p)| p.velocity.data().iter().all(|v| v.to_f64() == 0.0))
}

fn finish<T: Scalar>(
    kind: StageKind,
    mut model: Model<T>,
    data: &StageData<T>,
    cfg: &TrainConfig,
    policy: AugmentPolicy,
    augment: &AugmentConfig,
) -> Result<StageOutput<T>> {
    let initial_parameter_count = model.parameter_count();
    let started_with_zero_velocity = velocity_is_zero(&model);
    let log = train(&mut model, &data.train, Some(&data.test), cfg, policy, augment, kind.tag())?;
    let predictions = evaluate(&mut model, &data.test)?;
    let checkpoint = Checkpoint::from_model(&model, kind.tag(), cfg.seed, data.train.head_keys.clone());
    Ok(StageOutput { kind, model, log, predictions, checkpoint, initial_parameter_count, started_with_zero_velocity })
}

fn fresh<T: Scalar>(arch: &ArchitectureConfig, cfg: &TrainConfig, kind: StageKind) -> Result<Model<T>> {
    Model::init(arch, &mut rng::stream(cfg.seed, &format!("init/{}", kind.tag())))
}

pub fn run_scratch<T: Scalar>(
    arch: &ArchitectureConfig,
    data: &StageData<T>,
    cfg: &TrainConfig,
    policy: AugmentPolicy,
    augment: &AugmentConfig,
) -> Result<StageOutput<T>> {
    let arch = arch.clone().with_dropout(cfg.dropout);
    let model = fresh(&arch, cfg, StageKind::Scratch)?;
    finish(StageKind::Scratch, model, data, cfg, policy, augment)
}

/// Pretrains on the generic task; its head is discarded at transfer.
pub fn run_stage0<T: Scalar>(
    arch: &ArchitectureConfig,
    data: &StageData<T>,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<StageOutput<T>> {
    let arch = arch.clone().with_dropout(cfg.dropout);
    let model = fresh(&arch, cfg, StageKind::Stage0)?;
    finish(StageKind::Stage0, model, data, cfg, AugmentPolicy::Geometric, augment)
}

/// Copies every backbone tensor of `source` into `model`, checking shapes first.
pub fn transplant_backbone<T: Scalar>(model: &mut Model<T>, source: &Checkpoint<T>) -> Result<()> {
    let requested = model.arch().backbone_hash();
    let found = source.meta.arch.backbone_hash();
    if requested != found {
        return Err(Error::Config(format!(
            "source backbone {found} ({:?}) does not match requested backbone {requested} ({:?})",
            source.meta.arch.backbone.iter().map(|b| b.out_channels).collect::<Vec<_>>(),
            model.arch().backbone.iter().map(|b| b.out_channels).collect::<Vec<_>>()
        )));
    }
    for (name, p) in source.params.iter().filter(|(n, _)| n.starts_with(BACKBONE_PREFIX)) {
        let target = model
            .params
            .param_mut(name)
            .ok_or_else(|| Error::Config(format!("backbone tensor {name} missing from the new model")))?;
        if target.value.shape() != p.value.shape() {
            return Err(Error::Config(format!(
                "backbone tensor {name}: source {:?}, model {:?}",
                p.value.shape(),
                target.value.shape()
            )));
        }
        target.value = p.value.clone();
    }
    for (name, t) in source.buffers.iter().filter(|(n, _)| n.starts_with(BACKBONE_PREFIX)) {
        match model.buffers.get_mut(name) {
            Some(b) if b.shape() == t.shape() => *b = t.clone(),
            _ => return Err(Error::Config(format!("backbone buffer {name} does not fit the new model"))),
        }
    }
    model.params.reset_velocity();
    Ok(())
}

/// First transfer step: backbone from `source` when given, fresh head,
/// geometric + blur augmentation.
pub fn run_hetl<T: Scalar>(
    source: Option<&Checkpoint<T>>,
    arch: &ArchitectureConfig,
    data: &StageData<T>,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<StageOutput<T>> {
    let arch = arch.clone().with_dropout(cfg.dropout);
    let mut model = fresh(&arch, cfg, StageKind::Hetl)?;
    if let Some(src) = source {
        if src.meta.stage != StageKind::Stage0.tag() {
            return Err(Error::StageContract(format!(
                "hetl starts from a stage0 checkpoint, got one tagged {:?}",
                src.meta.stage
            )));
        }
        transplant_backbone(&mut model, src)?;
    }
    finish(StageKind::Hetl, model, data, cfg, AugmentPolicy::GeometricBlur, augment)
}

/// Second transfer step: the source model is reused unchanged (no layer
/// added or removed), velocity is zeroed and only geometric augmentation
/// is applied.
pub fn run_hotl<T: Scalar>(
    source: &Checkpoint<T>,
    arch: &ArchitectureConfig,
    data: &StageData<T>,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<StageOutput<T>> {
    let stage = source.meta.stage.as_str();
    if stage != StageKind::Hetl.tag() && stage != StageKind::Scratch.tag() {
        return Err(Error::StageContract(format!("hotl starts from a hetl or scratch checkpoint, got {stage:?}")));
    }
    let arch = arch.clone().with_dropout(cfg.dropout);
    if source.meta.arch.backbone_hash() == arch.backbone_hash() && source.meta.arch_hash != arch.hash() {
        return Err(Error::StageContract(format!(
            "hotl reuses the source model without modification; requested head has {} layers ({:?}), source has {} ({:?})",
            arch.head.len(),
            arch.head.iter().map(|d| d.width).collect::<Vec<_>>(),
            source.meta.arch.head.len(),
            source.meta.arch.head.iter().map(|d| d.width).collect::<Vec<_>>()
        )));
    }
    let mut model = source.to_model(&arch)?;
    if model.parameter_count() != source.params.scalar_count() {
        return Err(Error::StageContract(format!(
            "parameter count changed from {} to {}",
            source.params.scalar_count(),
            model.parameter_count()
        )));
    }
    model.params.reset_velocity();
    finish(StageKind::Hotl, model, data, cfg, AugmentPolicy::Geometric, augment)
}

/// Target-dataset head order for the second step.
pub fn hotl_head_keys(source_keys: &[String], target_keys: &[String], map: &ClassMap) -> Result<Vec<String>> {
    map.head_keys(source_keys, target_keys)
}
