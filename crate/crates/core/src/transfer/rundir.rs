//! Run directory layout: `config.json`, `seed.txt`, `checkpoints/`, `logs/`,
//! `predictions/`, plus `metadata.json` for anything that varies between
//! otherwise identical invocations (wall-clock timings).

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::stages::StageOutput;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone)]
pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "logs", "predictions"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        self.write_text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn write_config<S: Serialize>(&self, config: &S, seed: u64) -> Result<()> {
        self.write_json("config.json", config)?;
        self.write_text("seed.txt", &format!("{seed}\n"))?;
        Ok(())
    }

    pub fn checkpoint_path(&self, tag: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{tag}.kstl"))
    }

    /// Checkpoint, per-epoch log, augmentation counts and predictions of one stage.
    pub fn record_stage<T: Scalar>(&self, name: &str, out: &StageOutput<T>) -> Result<()> {
        out.checkpoint.save(&self.checkpoint_path(name))?;
        out.log.write_epoch_csv(&self.root.join("logs").join(format!("{name}_epochs.csv")))?;
        self.write_json(&format!("logs/{name}_augmentations.json"), &out.log.augmentations)?;
        out.predictions.write_csv(&self.root.join("predictions").join(format!("{name}.csv")))
    }

    pub fn write_metadata(&self, elapsed_seconds: f64, command: &str) -> Result<()> {
        let unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.write_json(
            METADATA_FILE,
            &serde_json::json!({ "command": command, "elapsed_seconds": elapsed_seconds, "finished_unix": unix }),
        )?;
        Ok(())
    }
}
