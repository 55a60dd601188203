//! On-disk layout of a training run.
//!
//! ```text
//! <root>/manifest.json
//! <root>/metrics.jsonl
//! <root>/report.json          list of PhaseReport
//! <root>/status.json
//! <root>/S<k>/policy_<side>_<checkpoint>.json
//! <root>/S<k>/value_<side>_final.json
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::PhaseReport;
use crate::config::RunConfig;
use crate::error::Result;
use crate::policy::{save_policy, save_value, PolicyParameters, ValueParameters};

/// One line of `metrics.jsonl`, written after every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub global_step: u64,
    pub phase: usize,
    pub side: String,
    pub episodes: u64,
    pub mean_reward: f64,
    pub episode_len: f64,
    /// Training-time (stochastic) outcome rates over this update's episodes.
    pub sr_runner: f64,
    pub sr_chaser: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub mode: crate::config::TrainMode,
    /// The final phase met the equilibrium threshold.
    pub converged: bool,
    pub phases: usize,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub crate_name: &'static str,
    pub crate_version: &'static str,
    pub command: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutput {
    root: PathBuf,
    metrics: Mutex<Option<std::io::BufWriter<std::fs::File>>>,
}

impl RunOutput {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            metrics: Mutex::new(None),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: usize) -> PathBuf {
        self.root.join(format!("S{stage}"))
    }

    pub fn policy_path(&self, stage: usize, side: &str, checkpoint: &str) -> PathBuf {
        self.stage_dir(stage)
            .join(format!("policy_{side}_{checkpoint}.json"))
    }

    pub fn value_path(&self, stage: usize, side: &str) -> PathBuf {
        self.stage_dir(stage)
            .join(format!("value_{side}_final.json"))
    }

    pub fn save_policy(
        &self,
        stage: usize,
        side: &str,
        checkpoint: &str,
        p: &PolicyParameters,
    ) -> Result<PathBuf> {
        let path = self.policy_path(stage, side, checkpoint);
        std::fs::create_dir_all(self.stage_dir(stage))?;
        save_policy(p, &path)?;
        Ok(path)
    }

    pub fn save_value(&self, stage: usize, side: &str, v: &ValueParameters) -> Result<PathBuf> {
        let path = self.value_path(stage, side);
        std::fs::create_dir_all(self.stage_dir(stage))?;
        save_value(v, &path)?;
        Ok(path)
    }

    pub fn append_metrics(&self, row: &MetricsRow) -> Result<()> {
        let mut guard = self.metrics.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.root.join("metrics.jsonl"))?;
            *guard = Some(std::io::BufWriter::new(f));
        }
        if let Some(w) = guard.as_mut() {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        if let Some(w) = self
            .metrics
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .as_mut()
        {
            w.flush()?;
        }
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, serde_json::to_vec_pretty(value)?)?;
        Ok(path)
    }

    pub fn write_reports(&self, reports: &[PhaseReport]) -> Result<PathBuf> {
        self.flush()?;
        self.write_json("report.json", reports)
    }

    pub fn read_reports(root: &Path) -> Result<Vec<PhaseReport>> {
        let text = std::fs::read_to_string(root.join("report.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Drop for RunOutput {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
