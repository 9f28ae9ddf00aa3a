use std::path::{Path, PathBuf};
use std::time::Instant;

use stage_transfer::data::store::write_patch_store;
use stage_transfer::data::{extract_all, load_manifest, prepare, DatasetTag, ImageRecord, PreparedData, Subset};
use stage_transfer::embed::{extract_features, pca_project, separability_report, write_embedding_csv, RowMeta, PROJECTION_NOTE};
use stage_transfer::metrics::{confusion, metrics, ResultsTable};
use stage_transfer::nn::{gradcheck, Checkpoint};
use stage_transfer::rng::derive_seed;
use stage_transfer::synth::{self, generate, generic_textures};
use stage_transfer::transfer::matrix::{run_stage0_for, stage0_pipeline};
use stage_transfer::transfer::stages::hotl_head_keys;
use stage_transfer::transfer::{
    calibrate_shift, evaluate, run_hetl, run_hotl, run_matrix, run_scratch, Datasets, ExperimentConfig, MatrixSpec,
    RunDirectory, StageData, StageKind, StageOutput, Strategy,
};
use stage_transfer::{Error, Precision, Result, Scalar};

use crate::{CheckpointArgs, Cli, Command, Common, DataArgs, TransferArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    let started = Instant::now();
    let precision = cfg.scratch.precision;
    match (&cli.command, precision) {
        (Command::SynthGen, _) => synth_gen(c, &cfg),
        (Command::Patchify(d), _) => patchify(c, &cfg, d),
        (Command::Split(d), _) => split_cmd(c, &cfg, d),
        (Command::Stats(d), _) => stats_cmd(c, &cfg, d),
        (Command::Gradcheck, _) => gradcheck_cmd(c),
        (Command::Report(r), _) => report(&r.input, &r.format),
        (cmd, Precision::Single) => typed::<f32>(c, &cfg, cmd, started),
        (cmd, Precision::Double) => typed::<f64>(c, &cfg, cmd, started),
    }
}

fn typed<T: Scalar>(c: &Common, cfg: &ExperimentConfig, cmd: &Command, started: Instant) -> Result<()> {
    match cmd {
        Command::Train(t) => {
            let mut cfg = cfg.clone();
            if let Some(e) = t.epochs {
                cfg.scratch.epochs = e;
            }
            train_cmd::<T>(c, &cfg, &t.data, started)
        }
        Command::Transfer(t) => transfer_cmd::<T>(c, cfg, t, started),
        Command::Matrix(m) => {
            let spec = MatrixSpec {
                strategies: if m.strategies.is_empty() { Strategy::ALL.to_vec() } else { m.strategies.clone() },
                subsets: if m.subsets.is_empty() { Subset::ALL.to_vec() } else { m.subsets.clone() },
                n_runs: m.runs,
                base_seed: c.seed(),
            };
            matrix_cmd::<T>(c, cfg, &spec, started)
        }
        Command::Evaluate(a) => evaluate_cmd::<T>(c, cfg, a),
        Command::Features(a) => features_cmd::<T>(c, cfg, a),
        Command::Calibrate(a) => {
            let points = calibrate_shift::<T>(cfg, &a.grid, a.margin)?;
            for p in &points {
                println!(
                    "shift {:.3}: two-step {:.3} one-step {:.3} scratch {:.3} {}",
                    p.shift_strength,
                    p.two_step,
                    p.one_step,
                    p.scratch,
                    if p.passes { "meets margin" } else { "below margin" }
                );
            }
            if let Some(out) = &c.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let p = out.join("calibration.json");
                std::fs::write(&p, serde_json::to_string_pretty(&points)? + "\n").map_err(|e| Error::io(&p, e))?;
            }
            match points.iter().find(|p| p.passes) {
                Some(p) => {
                    println!("smallest passing shift strength: {}", p.shift_strength);
                    Ok(())
                }
                None => Err(Error::Data(format!("no shift strength in {:?} meets the margin {}", a.grid, a.margin))),
            }
        }
        _ => unreachable!("untyped commands are dispatched in run"),
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)
        }
        None => {
            let cfg = ExperimentConfig::preset(&c.preset)?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn require_out(c: &Common) -> Result<&Path> {
    c.out.as_deref().ok_or_else(|| Error::Usage("--out is required for this command".into()))
}

fn dataset_tag(name: &str) -> Result<DatasetTag> {
    name.parse().map_err(|_| Error::Usage(format!("unknown dataset {name:?} (a|b|generic)")))
}

fn records(c: &Common, cfg: &ExperimentConfig, tag: DatasetTag) -> Result<Vec<ImageRecord>> {
    match &c.data {
        Some(dir) => {
            let sub = match tag {
                DatasetTag::A => synth::DOMAIN_A_DIR,
                DatasetTag::B => synth::DOMAIN_B_DIR,
                DatasetTag::Generic => synth::GENERIC_DIR,
            };
            load_manifest(&dir.join(sub).join(synth::MANIFEST_FILE))
        }
        None => match tag {
            DatasetTag::Generic => Ok(generic_textures(&cfg.synth, cfg.synth_seed)),
            _ => {
                let bench = generate(&cfg.synth, cfg.synth_seed)?;
                Ok(if tag == DatasetTag::A { bench.a } else { bench.b })
            }
        },
    }
}

fn prepared(c: &Common, cfg: &ExperimentConfig, d: &DataArgs) -> Result<PreparedData> {
    let tag = dataset_tag(&d.dataset)?;
    let recs = records(c, cfg, tag)?;
    let (pipeline, subset) = match tag {
        DatasetTag::Generic => (stage0_pipeline(cfg), Subset::Mixed),
        _ => (cfg.pipeline.clone(), d.subset),
    };
    let p = prepare(&recs, subset, &pipeline, derive_seed(c.seed(), &format!("data/{tag}")))?;
    for w in &p.warnings {
        log::warn!("{w}");
    }
    Ok(p)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn synth_gen(c: &Common, cfg: &ExperimentConfig) -> Result<()> {
    let out = require_out(c)?;
    let seed = c.seed.unwrap_or(cfg.synth_seed);
    let bench = generate(&cfg.synth, seed)?;
    bench.write_to(out)?;
    let generic = generic_textures(&cfg.synth, seed);
    synth::write_dataset(&out.join(synth::GENERIC_DIR), &generic)?;
    println!(
        "wrote {} A, {} B and {} generic images (shift strength {}) to {}",
        bench.a.len(),
        bench.b.len(),
        generic.len(),
        cfg.synth.shift_strength,
        out.display()
    );
    Ok(())
}

fn patchify(c: &Common, cfg: &ExperimentConfig, d: &DataArgs) -> Result<()> {
    let out = require_out(c)?;
    let tag = dataset_tag(&d.dataset)?;
    let recs: Vec<ImageRecord> = records(c, cfg, tag)?.into_iter().filter(|r| d.subset.contains(r.view)).collect();
    let edge = if tag == DatasetTag::Generic { cfg.synth.generic_edge } else { cfg.pipeline.patch_edge };
    let ex = extract_all(&recs, edge, cfg.pipeline.max_overlap)?;
    for w in &ex.warnings {
        log::warn!("{w}");
    }
    write_patch_store(out, &ex.patches)?;
    println!("{} patches from {} images ({} skipped)", ex.patches.len(), recs.len(), ex.warnings.len());
    Ok(())
}

fn split_cmd(c: &Common, cfg: &ExperimentConfig, d: &DataArgs) -> Result<()> {
    let p = prepared(c, cfg, d)?;
    let json = p.split.to_json()?;
    match &c.out {
        Some(path) => write_file(path, &(json + "\n"))?,
        None => println!("{json}"),
    }
    println!(
        "{} train / {} test units, train fraction {:.3}",
        p.split.train.len(),
        p.split.test.len(),
        p.split.train_fraction()
    );
    Ok(())
}

fn stats_cmd(c: &Common, cfg: &ExperimentConfig, d: &DataArgs) -> Result<()> {
    let p = prepared(c, cfg, d)?;
    let json = serde_json::to_string_pretty(&p.stats)?;
    if let Some(path) = &c.out {
        write_file(path, &(json.clone() + "\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn finish_stage<T: Scalar>(
    c: &Common,
    cfg: &ExperimentConfig,
    out: &StageOutput<T>,
    command: &str,
    started: Instant,
) -> Result<()> {
    let dir = RunDirectory::create(require_out(c)?)?;
    dir.write_config(cfg, c.seed())?;
    let tag = out.kind.tag();
    dir.record_stage(tag, out)?;
    let p = &out.predictions;
    let m = metrics(&confusion(&p.predicted, &p.labels, &p.class_keys)?)?;
    dir.write_json("metrics.json", &m)?;
    dir.write_metadata(started.elapsed().as_secs_f64(), command)?;
    println!(
        "{tag}: accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}; checkpoint {}",
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        dir.checkpoint_path(tag).display()
    );
    Ok(())
}

fn stage_seed(c: &Common, kind: StageKind) -> u64 {
    derive_seed(c.seed(), kind.tag())
}

fn train_cmd<T: Scalar>(c: &Common, cfg: &ExperimentConfig, d: &DataArgs, started: Instant) -> Result<()> {
    require_out(c)?;
    let p = prepared(c, cfg, d)?;
    let data = StageData::<T>::from_prepared(&p, None)?;
    let arch = cfg.arch.clone().with_head({
        let mut h = cfg.arch.head.clone();
        h.pop();
        h.push(stage_transfer::nn::DenseSpec::logits(p.class_keys.len()));
        h
    });
    let tc = cfg.scratch.clone().with_seed(stage_seed(c, StageKind::Scratch));
    let out = run_scratch(&arch, &data, &tc, cfg.scratch_augment, &cfg.augment)?;
    finish_stage(c, cfg, &out, "train", started)
}

fn transfer_cmd<T: Scalar>(c: &Common, cfg: &ExperimentConfig, t: &TransferArgs, started: Instant) -> Result<()> {
    let mut cfg = cfg.clone();
    let load = |p: &PathBuf| Checkpoint::<T>::load(p);
    let out = match t.stage {
        StageKind::Stage0 => {
            if let Some(e) = t.epochs {
                cfg.stage0.epochs = e;
            }
            require_out(c)?;
            let generic = records(c, &cfg, DatasetTag::Generic)?;
            run_stage0_for::<T>(&cfg, &generic, c.seed())?
        }
        StageKind::Hetl => {
            if let Some(e) = t.epochs {
                cfg.hetl.epochs = e;
            }
            require_out(c)?;
            let source = t.from_checkpoint.as_ref().map(load).transpose()?;
            let p = prepared(c, &cfg, &t.data)?;
            let data = StageData::<T>::from_prepared(&p, None)?;
            let tc = cfg.hetl.clone().with_seed(stage_seed(c, StageKind::Hetl));
            run_hetl(source.as_ref(), &cfg.arch, &data, &tc, &cfg.augment)?
        }
        StageKind::Hotl => {
            if let Some(e) = t.epochs {
                cfg.hotl.epochs = e;
            }
            let path = t.from_checkpoint.as_ref().ok_or_else(|| {
                Error::Usage(
                    "transfer --stage hotl needs --from-checkpoint: the hetl (or scratch) checkpoint to hand off from".into(),
                )
            })?;
            require_out(c)?;
            let source = load(path)?;
            let p = prepared(c, &cfg, &t.data)?;
            let head = hotl_head_keys(&source.meta.class_keys, &p.class_keys, &cfg.class_map)?;
            let data = StageData::<T>::from_prepared(&p, Some(&head))?;
            let tc = cfg.hotl.clone().with_seed(stage_seed(c, StageKind::Hotl));
            run_hotl(&source, &cfg.arch, &data, &tc, &cfg.augment)?
        }
        StageKind::Scratch => {
            return Err(Error::Usage("scratch training is the `train` subcommand".into()));
        }
    };
    finish_stage(c, &cfg, &out, "transfer", started)
}

fn matrix_cmd<T: Scalar>(c: &Common, cfg: &ExperimentConfig, spec: &MatrixSpec, started: Instant) -> Result<()> {
    let datasets = match &c.data {
        Some(_) => Datasets {
            a: records(c, cfg, DatasetTag::A)?,
            b: records(c, cfg, DatasetTag::B)?,
            generic: records(c, cfg, DatasetTag::Generic)?,
        },
        None => Datasets::synthetic(cfg)?,
    };
    let outcome = run_matrix::<T>(cfg, &datasets, spec)?;
    let text = outcome.table.to_text();
    print!("{text}");
    if let Some(out) = &c.out {
        let dir = RunDirectory::create(out)?;
        dir.write_config(cfg, c.seed())?;
        dir.write_text("matrix.json", &(outcome.to_json()? + "\n"))?;
        dir.write_text("results.json", &(outcome.table.to_json()? + "\n"))?;
        dir.write_text("results.csv", &outcome.table.to_csv()?)?;
        dir.write_text("results.txt", &text)?;
        dir.write_metadata(started.elapsed().as_secs_f64(), "matrix")?;
    }
    let failed: usize = outcome.table.rows.iter().map(|r| r.failures.len()).sum();
    if failed > 0 {
        log::warn!("{failed} matrix cells failed; see matrix.json");
    }
    Ok(())
}

/// Test split of the requested dataset with the checkpoint's output order.
fn eval_data<T: Scalar>(
    c: &Common,
    cfg: &ExperimentConfig,
    a: &CheckpointArgs,
) -> Result<(Checkpoint<T>, PreparedData, StageData<T>)> {
    let ckpt = Checkpoint::<T>::load(&a.checkpoint)?;
    let p = prepared(c, cfg, &a.data)?;
    let head = if ckpt.meta.class_keys.iter().all(|k| p.class_keys.contains(k)) {
        ckpt.meta.class_keys.clone()
    } else {
        hotl_head_keys(&ckpt.meta.class_keys, &p.class_keys, &cfg.class_map)?
    };
    let data = StageData::from_prepared(&p, Some(&head))?;
    Ok((ckpt, p, data))
}

fn evaluate_cmd<T: Scalar>(c: &Common, cfg: &ExperimentConfig, a: &CheckpointArgs) -> Result<()> {
    let (ckpt, _, data) = eval_data::<T>(c, cfg, a)?;
    let mut model = ckpt.to_model(&ckpt.meta.arch)?;
    let preds = evaluate(&mut model, &data.test)?;
    let m = metrics(&confusion(&preds.predicted, &preds.labels, &preds.class_keys)?)?;
    println!("accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3} on {} patches", m.accuracy, m.precision, m.recall, m.f1, preds.labels.len());
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        preds.write_csv(&out.join("predictions.csv"))?;
        write_file(&out.join("metrics.json"), &(serde_json::to_string_pretty(&m)? + "\n"))?;
        if a.image_votes {
            let mut body = String::from("image_id,true,voted\n");
            for (id, t, v) in preds.image_votes() {
                body.push_str(&format!("{id},{},{}\n", preds.class_keys[t], preds.class_keys[v]));
            }
            write_file(&out.join("image_votes.csv"), &body)?;
        }
    }
    if a.image_votes {
        let votes = preds.image_votes();
        let hits = votes.iter().filter(|(_, t, v)| t == v).count();
        println!("image-level vote accuracy (extension) {:.3} on {} images", hits as f64 / votes.len().max(1) as f64, votes.len());
    }
    Ok(())
}

fn features_cmd<T: Scalar>(c: &Common, cfg: &ExperimentConfig, a: &CheckpointArgs) -> Result<()> {
    let (ckpt, _, data) = eval_data::<T>(c, cfg, a)?;
    let mut model = ckpt.to_model(&ckpt.meta.arch)?;
    let meta: Vec<RowMeta> = (0..data.test.len())
        .map(|i| RowMeta {
            patch_id: data.test.patch_ids[i].clone(),
            class_key: data.test.class_keys[i].clone(),
            view: data.test.views[i],
        })
        .collect();
    let features = extract_features(&mut model, &data.test.all()?, meta)?;
    let points: Vec<Vec<f64>> = (0..features.rows()).map(|i| features.row(i).to_vec()).collect();
    let report = separability_report(&points, &features.labels())?;
    let projection = pca_project(&features.data, features.rows(), features.cols, 2)?;
    println!("silhouette {:.3} over {} features of {} test patches", report.silhouette, features.cols, features.rows());
    println!("{PROJECTION_NOTE}");
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_embedding_csv(&out.join("embedding.csv"), &features.meta, &projection)?;
        write_file(&out.join("separability.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn report(input: &Path, format: &str) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let table: ResultsTable = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{} is not a results table: {e}", input.display())))?;
    match format {
        "text" => print!("{}", table.to_text()),
        "csv" => print!("{}", table.to_csv()?),
        "json" => println!("{}", table.to_json()?),
        other => return Err(Error::Usage(format!("unknown report format {other:?} (text|csv|json)"))),
    }
    Ok(())
}

fn gradcheck_cmd(c: &Common) -> Result<()> {
    let reports = gradcheck::run_suite(c.seed())?;
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!(
            "{:<24} coords {:>3}  worst relative error {:.3e}  {}",
            r.layer,
            r.coordinates,
            r.worst_relative_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
        worst = worst.max(r.worst_relative_error);
    }
    match reports.iter().find(|r| !r.passed()) {
        None => {
            println!("all {} checks below {:.0e}", reports.len(), gradcheck::TOLERANCE);
            Ok(())
        }
        Some(r) => Err(Error::GradCheck(format!(
            "{}: relative error {:.3e} over {} coordinates (worst overall {worst:.3e})",
            r.layer, r.worst_relative_error, r.coordinates
        ))),
    }
}
