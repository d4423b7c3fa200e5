//! Versioned JSON checkpoints. Floats are written in shortest round-trip form,
//! so a save/load cycle reproduces parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Policy, PolicyConfig, PolicyParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "roadlab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub format: String,
    pub version: u32,
    pub tag: String,
    pub step: usize,
    pub refresh_generation: usize,
    pub loss_mean: Option<f64>,
    pub config: PolicyConfig,
    pub params: PolicyParams,
}

impl CheckpointRecord {
    pub fn new(policy: &Policy, tag: &str, step: usize, refresh_generation: usize, loss_mean: Option<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tag: tag.into(),
            step,
            refresh_generation,
            loss_mean,
            config: policy.config.clone(),
            params: policy.params.clone(),
        }
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::from_params(self.config.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rec: CheckpointRecord =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if rec.format != CHECKPOINT_FORMAT || rec.version != CHECKPOINT_VERSION {
            return Err(Error::parse(path, format!("unsupported checkpoint {} v{}", rec.format, rec.version)));
        }
        Ok(rec)
    }
}
