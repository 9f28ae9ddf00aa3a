//! Strategy × subset × run experiment matrix.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::stages::{hotl_head_keys, run_hetl, run_hotl, run_scratch, run_stage0, StageData, StageOutput};
use super::trainer::EpochRecord;
use crate::data::{prepare, DatasetTag, ImageRecord, PipelineConfig, PreparedData, Subset};
use crate::embed::{extract_features, separability_report, RowMeta};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, confusion, metrics, ConfusionMatrix, ResultsTable, RunMetrics, TableRow};
use crate::rng::derive_seed;
use crate::synth::{generate, generic_textures};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NoTlA,
    NoTlB,
    HetlA,
    HetlB,
    HetlHotlB,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::NoTlA, Strategy::NoTlB, Strategy::HetlA, Strategy::HetlB, Strategy::HetlHotlB];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::NoTlA | Strategy::NoTlB => "No TL",
            Strategy::HetlA | Strategy::HetlB => "HeTL only",
            Strategy::HetlHotlB => "HeTL+HoTL",
        }
    }

    pub fn dataset(self) -> DatasetTag {
        match self {
            Strategy::NoTlA | Strategy::HetlA => DatasetTag::A,
            _ => DatasetTag::B,
        }
    }

    fn needs_stage0(self) -> bool {
        !matches!(self, Strategy::NoTlA | Strategy::NoTlB)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Usage(format!("unknown strategy {s:?} (no_tl_a|no_tl_b|hetl_a|hetl_b|hetl_hotl_b)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub strategies: Vec<Strategy>,
    pub subsets: Vec<Subset>,
    pub n_runs: usize,
    pub base_seed: u64,
}

impl MatrixSpec {
    pub fn full(n_runs: usize, base_seed: u64) -> Self {
        Self { strategies: Strategy::ALL.to_vec(), subsets: Subset::ALL.to_vec(), n_runs, base_seed }
    }

    /// Operating point used to choose the shipped shift strength: the three
    /// strategies on dataset B, surface subset, five runs.
    pub fn calibration() -> Self {
        Self {
            strategies: vec![Strategy::NoTlB, Strategy::HetlB, Strategy::HetlHotlB],
            subsets: vec![Subset::Surface],
            n_runs: 5,
            base_seed: 100,
        }
    }

    /// Seed of run `r` (1-based).
    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed + run as u64
    }
}

/// Image records of the three datasets an experiment draws on.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub a: Vec<ImageRecord>,
    pub b: Vec<ImageRecord>,
    pub generic: Vec<ImageRecord>,
}

impl Datasets {
    pub fn synthetic(cfg: &ExperimentConfig) -> Result<Self> {
        let bench = generate(&cfg.synth, cfg.synth_seed)?;
        Ok(Self { a: bench.a, b: bench.b, generic: generic_textures(&cfg.synth, cfg.synth_seed) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub metrics: RunMetrics,
    pub confusion: ConfusionMatrix,
    /// Mean silhouette of penultimate features on the test split.
    pub silhouette: f64,
    pub epochs: Vec<EpochRecord>,
    pub blur_applications: usize,
    pub parameter_count: usize,
    pub initial_parameter_count: usize,
    pub started_with_zero_velocity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub strategy: Strategy,
    pub subset: Subset,
    pub run: usize,
    pub seed: u64,
    pub result: std::result::Result<CellResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    pub stage0_accuracy: Option<f64>,
    pub cells: Vec<CellOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixOutcome {
    pub spec: MatrixSpec,
    pub config_hash: String,
    pub runs: Vec<RunOutcome>,
    pub table: ResultsTable,
}

impl MatrixOutcome {
    pub fn cells(&self, strategy: Strategy, subset: Subset) -> impl Iterator<Item = &CellOutcome> {
        self.runs.iter().flat_map(|r| &r.cells).filter(move |c| c.strategy == strategy && c.subset == subset)
    }

    /// Mean of `f` over the successful runs of one cell.
    pub fn mean_of(&self, strategy: Strategy, subset: Subset, f: impl Fn(&CellResult) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.cells(strategy, subset).filter_map(|c| c.result.as_ref().ok()).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn cell_result<T: Scalar>(out: &mut StageOutput<T>, data: &StageData<T>) -> Result<CellResult> {
    let p = &out.predictions;
    let cm = confusion(&p.predicted, &p.labels, &p.class_keys)?;
    let meta = (0..data.test.len())
        .map(|i| RowMeta {
            patch_id: data.test.patch_ids[i].clone(),
            class_key: data.test.class_keys[i].clone(),
            view: data.test.views[i],
        })
        .collect();
    let features = extract_features(&mut out.model, &data.test.all()?, meta)?;
    let points: Vec<Vec<f64>> = (0..features.rows()).map(|i| features.row(i).to_vec()).collect();
    let silhouette = separability_report(&points, &features.labels())?.silhouette;
    Ok(CellResult {
        metrics: metrics(&cm)?,
        confusion: cm,
        silhouette,
        epochs: out.log.epochs.clone(),
        blur_applications: out.log.blur_count(),
        parameter_count: out.model.parameter_count(),
        initial_parameter_count: out.initial_parameter_count,
        started_with_zero_velocity: out.started_with_zero_velocity,
    })
}

/// Generic-task preparation: every image is a single patch, no balancing.
pub fn stage0_pipeline(cfg: &ExperimentConfig) -> PipelineConfig {
    PipelineConfig { balance_per_class: None, ..cfg.pipeline.clone() }
}

pub fn run_stage0_for<T: Scalar>(cfg: &ExperimentConfig, generic: &[ImageRecord], seed: u64) -> Result<StageOutput<T>> {
    let prepared = prepare(generic, Subset::Mixed, &stage0_pipeline(cfg), derive_seed(seed, "data/generic"))?;
    let data = StageData::from_prepared(&prepared, None)?;
    let arch = cfg.stage0_arch(prepared.class_keys.len());
    run_stage0(&arch, &data, &cfg.stage0.clone().with_seed(derive_seed(seed, "stage0")), &cfg.augment)
}

type Prepared<T> = (PreparedData, StageData<T>);

fn prepare_stage<T: Scalar>(
    cfg: &ExperimentConfig,
    records: &[ImageRecord],
    subset: Subset,
    seed: u64,
    tag: DatasetTag,
) -> Result<Prepared<T>> {
    let prepared = prepare(records, subset, &cfg.pipeline, derive_seed(seed, &format!("data/{tag}")))?;
    let data = StageData::from_prepared(&prepared, None)?;
    Ok((prepared, data))
}

fn ready<'a, T>(slot: &'a Option<Result<Prepared<T>>>, tag: DatasetTag) -> Result<&'a Prepared<T>> {
    match slot {
        Some(Ok(p)) => Ok(p),
        Some(Err(e)) => Err(Error::Data(format!("dataset {tag} preparation failed: {e}"))),
        None => Err(Error::Data(format!("dataset {tag} was not prepared"))),
    }
}

/// Runs every requested strategy of one subset and run. Failures are kept
/// per cell; the HeTL-on-A model is trained once and shared with HoTL.
pub fn run_subset<T: Scalar>(
    cfg: &ExperimentConfig,
    datasets: &Datasets,
    strategies: &[Strategy],
    subset: Subset,
    seed: u64,
    stage0: Option<&StageOutput<T>>,
) -> Vec<(Strategy, Result<CellResult>)> {
    let needs_a = strategies.iter().any(|s| matches!(s, Strategy::NoTlA | Strategy::HetlA | Strategy::HetlHotlB));
    let needs_b = strategies.iter().any(|s| s.dataset() == DatasetTag::B);
    let a = needs_a.then(|| prepare_stage::<T>(cfg, &datasets.a, subset, seed, DatasetTag::A));
    let b = needs_b.then(|| prepare_stage::<T>(cfg, &datasets.b, subset, seed, DatasetTag::B));
    let train_cfg = |base: &super::config::TrainConfig, name: &str| {
        base.clone().with_seed(derive_seed(seed, &format!("{subset}/{name}")))
    };
    let stage0_ckpt = || {
        stage0
            .map(|s| &s.checkpoint)
            .ok_or_else(|| Error::StageContract("stage0 pretraining failed for this run".into()))
    };
    let mut hetl_a: Option<std::result::Result<StageOutput<T>, String>> = None;
    let ensure_hetl_a = |hetl_a: &mut Option<std::result::Result<StageOutput<T>, String>>| -> Result<()> {
        if hetl_a.is_none() {
            let r = (|| {
                let (_, data) = ready(&a, DatasetTag::A)?;
                run_hetl(Some(stage0_ckpt()?), &cfg.arch, data, &train_cfg(&cfg.hetl, "hetl_a"), &cfg.augment)
            })();
            *hetl_a = Some(r.map_err(|e| e.to_string()));
        }
        match hetl_a.as_ref().expect("set above") {
            Ok(_) => Ok(()),
            Err(e) => Err(Error::StageContract(format!("hetl on A failed: {e}"))),
        }
    };
    let mut out = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let result = (|| -> Result<CellResult> {
            match strategy {
                Strategy::NoTlA | Strategy::NoTlB => {
                    let slot = if strategy == Strategy::NoTlA { &a } else { &b };
                    let (_, data) = ready(slot, strategy.dataset())?;
                    let tc = train_cfg(&cfg.scratch, &strategy.to_string());
                    let mut run = run_scratch(&cfg.arch, data, &tc, cfg.scratch_augment, &cfg.augment)?;
                    cell_result(&mut run, data)
                }
                Strategy::HetlB => {
                    let (_, data) = ready(&b, DatasetTag::B)?;
                    let tc = train_cfg(&cfg.hetl, "hetl_b");
                    let mut run = run_hetl(Some(stage0_ckpt()?), &cfg.arch, data, &tc, &cfg.augment)?;
                    cell_result(&mut run, data)
                }
                Strategy::HetlA => {
                    ensure_hetl_a(&mut hetl_a)?;
                    let (_, data) = ready(&a, DatasetTag::A)?;
                    let run = hetl_a.as_mut().and_then(|r| r.as_mut().ok()).expect("checked above");
                    cell_result(run, data)
                }
                Strategy::HetlHotlB => {
                    ensure_hetl_a(&mut hetl_a)?;
                    let source = &hetl_a.as_ref().and_then(|r| r.as_ref().ok()).expect("checked above").checkpoint;
                    let (prepared, _) = ready(&b, DatasetTag::B)?;
                    let head = hotl_head_keys(&source.meta.class_keys, &prepared.class_keys, &cfg.class_map)?;
                    let data = StageData::from_prepared(prepared, Some(&head))?;
                    let tc = train_cfg(&cfg.hotl, "hotl_b");
                    let mut run = run_hotl(source, &cfg.arch, &data, &tc, &cfg.augment)?;
                    cell_result(&mut run, &data)
                }
            }
        })();
        if let Err(e) = &result {
            log::warn!("{strategy} on {subset} (seed {seed}) failed: {e}");
        }
        out.push((strategy, result));
    }
    out
}

fn run_one<T: Scalar>(cfg: &ExperimentConfig, datasets: &Datasets, spec: &MatrixSpec, run: usize) -> RunOutcome {
    let seed = spec.run_seed(run);
    let stage0 = if spec.strategies.iter().any(|s| s.needs_stage0()) {
        match run_stage0_for::<T>(cfg, &datasets.generic, seed) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("stage0 for run {run} failed: {e}");
                None
            }
        }
    } else {
        None
    };
    let mut cells = Vec::new();
    for &subset in &spec.subsets {
        for (strategy, result) in run_subset(cfg, datasets, &spec.strategies, subset, seed, stage0.as_ref()) {
            cells.push(CellOutcome { strategy, subset, run, seed, result: result.map_err(|e| e.to_string()) });
        }
    }
    RunOutcome { run, seed, stage0_accuracy: stage0.map(|s| s.predictions.accuracy()), cells }
}

/// Worker count: `STAGE_TRANSFER_THREADS` when set, else all cores.
pub fn thread_count() -> usize {
    std::env::var("STAGE_TRANSFER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs the whole matrix. Runs fan out across worker threads; each run is
/// deterministic on its own, so results do not depend on the thread count.
pub fn run_matrix<T: Scalar>(cfg: &ExperimentConfig, datasets: &Datasets, spec: &MatrixSpec) -> Result<MatrixOutcome> {
    cfg.validate()?;
    if spec.n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<RunOutcome> =
        pool.install(|| (1..=spec.n_runs).into_par_iter().map(|r| run_one::<T>(cfg, datasets, spec, r)).collect());
    let mut table = ResultsTable::default();
    for &subset in &spec.subsets {
        for &strategy in &spec.strategies {
            let cells: Vec<&CellOutcome> =
                runs.iter().flat_map(|r| &r.cells).filter(|c| c.strategy == strategy && c.subset == subset).collect();
            let ok: Vec<RunMetrics> = cells.iter().filter_map(|c| c.result.as_ref().ok()).map(|r| r.metrics.clone()).collect();
            let failures: Vec<String> = cells
                .iter()
                .filter_map(|c| c.result.as_ref().err().map(|e| format!("run {}: {e}", c.run)))
                .collect();
            let dataset = strategy.dataset().to_string();
            let report = if ok.is_empty() {
                None
            } else {
                Some(aggregate(strategy.label(), &subset.to_string(), &dataset, ok)?)
            };
            table.rows.push(TableRow {
                strategy: strategy.label().to_string(),
                subset: subset.to_string(),
                dataset,
                report,
                failures,
            });
        }
    }
    Ok(MatrixOutcome { spec: spec.clone(), config_hash: cfg.hash(), runs, table })
}

/// One shift strength tried by [`calibrate_shift`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub shift_strength: f64,
    pub two_step: f64,
    pub one_step: f64,
    pub scratch: f64,
    pub passes: bool,
}

/// Tries `grid` in ascending order with the calibration matrix and stops at
/// the first strength where two-step beats scratch by `margin`.
pub fn calibrate_shift<T: Scalar>(cfg: &ExperimentConfig, grid: &[f64], margin: f64) -> Result<Vec<CalibrationPoint>> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let spec = MatrixSpec::calibration();
    let mut points = Vec::new();
    for s in grid {
        let mut c = cfg.clone();
        c.synth.shift_strength = s;
        let out = run_matrix::<T>(&c, &Datasets::synthetic(&c)?, &spec)?;
        let mean = |st| {
            out.mean_of(st, Subset::Surface, |r| r.metrics.accuracy)
                .ok_or_else(|| Error::Data(format!("{st} failed in every calibration run")))
        };
        let (two_step, one_step, scratch) = (mean(Strategy::HetlHotlB)?, mean(Strategy::HetlB)?, mean(Strategy::NoTlB)?);
        let passes = two_step >= scratch + margin;
        log::info!("shift {s}: two-step {two_step:.3}, one-step {one_step:.3}, scratch {scratch:.3}");
        points.push(CalibrationPoint { shift_strength: s, two_step, one_step, scratch, passes });
        if passes {
            break;
        }
    }
    Ok(points)
}
