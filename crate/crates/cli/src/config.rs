use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mage_core::engine::TrainConfig;
use mage_core::tasks::RosterConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Contents of an experiment config file. See `configs/default.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub roster: PathBuf,
    pub runs: PathBuf,
    pub order: String,
    pub seeds: Vec<u64>,
    pub generate: RosterConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            roster: PathBuf::from("roster/roster.json"),
            runs: PathBuf::from("runs"),
            order: "default".into(),
            seeds: vec![0],
            generate: RosterConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(UsageError("seed list is empty".into()).into());
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Joins relative paths onto the output root.
pub fn under(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}
