//! Where each stage keeps its artifacts under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use scour_core::config::RunConfig;
use scour_core::{Error, Result};

pub const CONFIG_ECHO: &str = "config.ini";

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn stage(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn synth_raw(&self) -> PathBuf {
        self.stage("synth").join("raw.csv")
    }

    pub fn synth_truth(&self) -> PathBuf {
        self.stage("synth").join("truth.csv")
    }

    pub fn ingest_series(&self) -> PathBuf {
        self.stage("ingest").join("series.csv")
    }

    pub fn cleaned(&self) -> PathBuf {
        self.stage("preprocess").join("cleaned.csv")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.stage("train")
    }

    pub fn grid_results(&self) -> PathBuf {
        self.stage("gridsearch").join("results.csv")
    }

    pub fn grid_best(&self) -> PathBuf {
        self.stage("gridsearch").join("best.txt")
    }

    pub fn forecast_members(&self) -> PathBuf {
        self.stage("forecast").join("members.csv")
    }

    pub fn forecast_errors(&self) -> PathBuf {
        self.stage("forecast").join("errors.csv")
    }

    pub fn alert_csv(&self) -> PathBuf {
        self.stage("alert").join("alert.csv")
    }

    /// Create a stage directory and write the resolved configuration into it.
    pub fn begin(&self, stage: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let dir = self.stage(stage);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CONFIG_ECHO), cfg.to_ini())?;
        Ok(dir)
    }
}

/// Fail with a pointer to the stage that produces `path` when it is absent.
pub fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { stage: stage.to_string(), path: path.to_path_buf() })
    }
}
