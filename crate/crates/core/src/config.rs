//! Run configuration shared by the scheduler, the CLI and the live server.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arena::{RewardWeights, WorldConfig};
use crate::error::{Error, Result};
use crate::ppo::TrainerConfig;
use crate::scheduler::StagePlan;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Ams,
    Direct,
    ColdStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub world: WorldConfig,
    pub rewards: RewardWeights,
    pub trainer: TrainerConfig,
    pub plan: StagePlan,
    pub seed: u64,
    /// Output root. `PE_RUNS_DIR` takes precedence; `runs` when neither is set.
    pub output_dir: Option<String>,
    pub mode: TrainMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            world: WorldConfig::default(),
            rewards: RewardWeights::default(),
            trainer: TrainerConfig::default(),
            plan: StagePlan::default(),
            seed: 0,
            output_dir: None,
            mode: TrainMode::Ams,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.world.validate()?;
        self.rewards.validate()?;
        self.trainer.validate()?;
        self.plan.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Small networks and budgets that train in minutes on one core.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.trainer = TrainerConfig::desk();
        cfg.world.normalize_observations = true;
        cfg
    }
}
