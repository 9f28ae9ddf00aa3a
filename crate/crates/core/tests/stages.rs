use std::collections::BTreeSet;
use std::sync::OnceLock;

use stage_transfer::data::{AugmentConfig, AugmentPolicy, Subset};
use stage_transfer::nn::{softmax_cross_entropy, ArchitectureConfig, Checkpoint, Mode, Model};
use stage_transfer::transfer::matrix::run_stage0_for;
use stage_transfer::transfer::stages::{hotl_head_keys, run_hetl, run_hotl, run_scratch, StageData, StageOutput};
use stage_transfer::transfer::{Datasets, ExperimentConfig};
use stage_transfer::{ErrorCategory, Tensor};

struct Chain {
    cfg: ExperimentConfig,
    a: StageData<f64>,
    b: StageData<f64>,
    stage0: StageOutput<f64>,
    hetl: StageOutput<f64>,
    hotl: StageOutput<f64>,
}

fn chain() -> &'static Chain {
    static CHAIN: OnceLock<Chain> = OnceLock::new();
    CHAIN.get_or_init(|| {
        let cfg = ExperimentConfig::smoke();
        let ds = Datasets::synthetic(&cfg).unwrap();
        let pa = stage_transfer::data::prepare(&ds.a, Subset::Surface, &cfg.pipeline, 1).unwrap();
        let pb = stage_transfer::data::prepare(&ds.b, Subset::Surface, &cfg.pipeline, 1).unwrap();
        let a = StageData::from_prepared(&pa, None).unwrap();
        let stage0 = run_stage0_for::<f64>(&cfg, &ds.generic, 1).unwrap();
        let hetl = run_hetl(Some(&stage0.checkpoint), &cfg.arch, &a, &cfg.hetl, &cfg.augment).unwrap();
        let head = hotl_head_keys(&hetl.checkpoint.meta.class_keys, &pb.class_keys, &cfg.class_map).unwrap();
        let b = StageData::from_prepared(&pb, Some(&head)).unwrap();
        let hotl = run_hotl(&hetl.checkpoint, &cfg.arch, &b, &cfg.hotl, &cfg.augment).unwrap();
        Chain { cfg, a, b, stage0, hetl, hotl }
    })
}

#[test]
fn hotl_adds_no_parameters() {
    let c = chain();
    assert_eq!(c.hotl.initial_parameter_count, c.hetl.model.parameter_count());
    assert_eq!(c.hotl.model.parameter_count(), c.hetl.model.parameter_count());
    assert_eq!(c.hotl.checkpoint.meta.arch_hash, c.hetl.checkpoint.meta.arch_hash);
}

#[test]
fn hotl_never_blurs_but_hetl_does() {
    let c = chain();
    assert_eq!(c.hotl.log.blur_count(), 0);
    assert!(c.hotl.log.augmentations.values().sum::<usize>() > 0);
    assert!(c.hetl.log.blur_count() > 0);
}

#[test]
fn hotl_starts_from_zero_velocity() {
    let c = chain();
    assert!(c.hotl.started_with_zero_velocity);
    assert!(c.hetl.model.params.iter().any(|(_, p)| p.velocity.data().iter().any(|v| *v != 0.0)));
}

#[test]
fn hetl_keeps_stage0_backbone_at_start() {
    let c = chain();
    let mut fresh = Model::<f64>::init(&c.cfg.arch, &mut stage_transfer::rng::stream(9, "x")).unwrap();
    stage_transfer::transfer::stages::transplant_backbone(&mut fresh, &c.stage0.checkpoint).unwrap();
    for (name, p) in c.stage0.checkpoint.params.iter().filter(|(n, _)| n.starts_with("backbone.")) {
        assert_eq!(fresh.params.get(name).unwrap(), &p.value, "{name}");
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let c = chain();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hotl.kstl");
    c.hotl.checkpoint.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.to_bytes(), c.hotl.checkpoint.to_bytes());
    let mut model = back.to_model(&c.cfg.arch.clone().with_dropout(c.cfg.hotl.dropout)).unwrap();
    let mut original = c.hotl.model.clone();
    let x = c.b.test.all().unwrap();
    let (l1, l2) = (model.logits(&x).unwrap(), original.logits(&x).unwrap());
    assert!(l1.data().iter().zip(l2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn training_never_reads_test_fragments() {
    let c = chain();
    let test: BTreeSet<String> = c.a.test.fragment_ids.iter().cloned().collect();
    assert!(!c.hetl.log.fragments_read.is_empty());
    assert!(c.hetl.log.fragments_read.is_disjoint(&test));
    let test_b: BTreeSet<String> = c.b.test.fragment_ids.iter().cloned().collect();
    assert!(c.hotl.log.fragments_read.is_disjoint(&test_b));
}

#[test]
fn hetl_rejects_non_stage0_source() {
    let c = chain();
    let err = run_hetl(Some(&c.hetl.checkpoint), &c.cfg.arch, &c.a, &c.cfg.hetl, &c.cfg.augment).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Contract);
}

#[test]
fn hotl_rejects_stage0_source_and_modified_head() {
    let c = chain();
    let err = run_hotl(&c.stage0.checkpoint, &c.cfg.arch, &c.b, &c.cfg.hotl, &c.cfg.augment).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Contract);
    let mut head = c.cfg.arch.head.clone();
    head.insert(0, stage_transfer::nn::DenseSpec::hidden(16, 0.5));
    let wider = c.cfg.arch.clone().with_head(head);
    let err = run_hotl(&c.hetl.checkpoint, &wider, &c.b, &c.cfg.hotl, &c.cfg.augment).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Contract, "{err}");
}

#[test]
fn hetl_rejects_mismatched_backbone() {
    let c = chain();
    let mut arch = c.cfg.arch.clone();
    arch.backbone[1].out_channels = 12;
    let err = run_hetl(Some(&c.stage0.checkpoint), &arch, &c.a, &c.cfg.hetl, &c.cfg.augment).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Config);
}

#[test]
fn uniform_init_loss_is_ln_six() {
    let arch = ArchitectureConfig::desk(16, 6);
    let mut model = Model::<f64>::init(&arch, &mut stage_transfer::rng::stream(4, "init")).unwrap();
    let last = arch.head.len() - 1;
    for suffix in ["weight", "bias"] {
        let p = model.params.param_mut(&format!("head.fc{last}.{suffix}")).unwrap();
        p.value = Tensor::zeros(p.value.shape());
    }
    let x = chain().a.train.batch(&(0..12).collect::<Vec<_>>()).unwrap();
    let logits = model.forward(&x, Mode::Train, &mut stage_transfer::rng::stream(4, "drop")).unwrap();
    let (loss, _) = softmax_cross_entropy(&logits, &chain().a.train.labels[..12]).unwrap();
    assert!((loss - 6f64.ln()).abs() < 1e-6, "{loss}");
}

#[test]
fn scratch_on_one_batch_overfits() {
    let arch = ArchitectureConfig::desk(16, 6);
    let a = &chain().a;
    let mut idx: Vec<usize> = Vec::new();
    for class in 0..6 {
        idx.extend((0..a.train.len()).filter(|&i| a.train.labels[i] == class).take(4));
    }
    assert_eq!(idx.len(), 24);
    let batch = stage_transfer::transfer::TensorSet {
        data: idx.iter().flat_map(|&i| a.train.sample(i).to_vec()).collect(),
        labels: idx.iter().map(|&i| a.train.labels[i]).collect(),
        patch_ids: idx.iter().map(|&i| a.train.patch_ids[i].clone()).collect(),
        image_ids: idx.iter().map(|&i| a.train.image_ids[i].clone()).collect(),
        fragment_ids: idx.iter().map(|&i| a.train.fragment_ids[i].clone()).collect(),
        class_keys: idx.iter().map(|&i| a.train.class_keys[i].clone()).collect(),
        views: idx.iter().map(|&i| a.train.views[i]).collect(),
        ..a.train.clone()
    };
    let data = StageData { train: batch.clone(), test: batch };
    let cfg = chain().cfg.scratch.clone().with_epochs(500);
    let cfg = stage_transfer::transfer::TrainConfig { batch_size: 24, learning_rate: 0.01, dropout: 0.0, ..cfg };
    let out = run_scratch(&arch, &data, &cfg, AugmentPolicy::None, &AugmentConfig::default()).unwrap();
    let first_below = out.log.epochs.iter().position(|e| e.train_loss < 0.01);
    assert!(first_below.is_some(), "final loss {}", out.log.epochs.last().unwrap().train_loss);
    assert_eq!(out.log.steps, 500);
}
