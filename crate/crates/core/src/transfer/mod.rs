//! Training strategies and their orchestration.

pub mod config;
pub mod matrix;
pub mod rundir;
pub mod stages;
pub mod trainer;

pub use config::{ClassMap, ExperimentConfig, StageKind, TrainConfig};
pub use matrix::{calibrate_shift, run_matrix, CalibrationPoint, CellResult, Datasets, MatrixOutcome, MatrixSpec, Strategy};
pub use rundir::RunDirectory;
pub use stages::{run_hetl, run_hotl, run_scratch, run_stage0, StageData, StageOutput};
pub use trainer::{evaluate, train, Predictions, TensorSet, TrainLog};
