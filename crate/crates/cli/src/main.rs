mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stage_transfer::data::Subset;
use stage_transfer::transfer::{StageKind, Strategy};

#[derive(Parser, Debug)]
#[command(name = "stage-transfer", version, about = "Two-step transfer learning experiments on texture patches")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in config when --config is absent: desk, smoke or full-size.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// The single seed every random stream is derived from (default 1; for
    /// synth-gen the config's benchmark seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory written by synth-gen; the benchmark is regenerated in memory when absent.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic benchmark (both domains and the generic task) to disk.
    SynthGen,
    /// Cut one dataset into patches and write a patch store.
    Patchify(DataArgs),
    /// Fragment-level train/test split of one dataset.
    Split(DataArgs),
    /// Whitening statistics of the training split.
    Stats(DataArgs),
    /// Train from scratch on one dataset.
    Train(TrainArgs),
    /// Run one stage of the transfer chain.
    Transfer(TransferArgs),
    /// Strategy x subset x run matrix.
    Matrix(MatrixArgs),
    /// Predictions and metrics of a checkpoint on a test split.
    Evaluate(CheckpointArgs),
    /// Penultimate features, 2-D projection and separability of a checkpoint.
    Features(CheckpointArgs),
    /// Re-render a results table written by `matrix`.
    Report(ReportArgs),
    /// Finite-difference gradient check of every layer.
    Gradcheck,
    /// Sweep the domain shift strength for the calibration matrix.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// a, b or generic.
    #[arg(long, default_value = "a")]
    pub dataset: String,
    /// surface, section or mixed.
    #[arg(long, default_value = "mixed")]
    pub subset: Subset,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TransferArgs {
    /// stage0, hetl or hotl.
    #[arg(long)]
    pub stage: StageKind,
    /// Checkpoint handed off from the previous stage.
    #[arg(long)]
    pub from_checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct MatrixArgs {
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Comma-separated strategies (default: all five).
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<Strategy>,
    /// Comma-separated subsets (default: all three).
    #[arg(long, value_delimiter = ',')]
    pub subsets: Vec<Subset>,
}

#[derive(Args, Debug, Clone)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write one vote per image (summed patch scores).
    #[arg(long)]
    pub image_votes: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// results.json written by `matrix`.
    #[arg(long)]
    pub input: PathBuf,
    /// text, csv or json.
    #[arg(long, default_value = "text")]
    pub format: String,
}

#[derive(Args, Debug, Clone)]
pub struct CalibrateArgs {
    /// Candidate shift strengths; zero is left out since it makes domain B a copy of A.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1")]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
}

impl Common {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category().as_str();
            let full = e.to_string().replace('\n', " ");
            let msg = full.strip_prefix(&format!("{cat} error: ")).unwrap_or(&full);
            eprintln!("error[{cat}]: {msg}");
            ExitCode::from(if e.category().as_str() == "usage" { 2 } else { 1 })
        }
    }
}
