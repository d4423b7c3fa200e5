use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::policy::model::PolicyConfig;
use crate::policy::pretrain::PretrainConfig;
use crate::rollout::dataset::hex;
use crate::rollout::guided::RolloutConfig;
use crate::sim::dynamics::SimulatorConfig;
use crate::sim::generate::ScenarioParams;
use crate::train::TrainConfig;

/// Scenario counts per split. Validation and test take `floor(count * fraction)`
/// scenarios each and training gets the remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub count: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { count: 250, val_fraction: 0.2, test_fraction: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitConfig {
    pub fn sizes(&self) -> SplitSizes {
        let val = (self.count as f64 * self.val_fraction).floor() as usize;
        let test = (self.count as f64 * self.test_fraction).floor() as usize;
        SplitSizes { train: self.count - val - test, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.val_fraction) || !ok(self.test_fraction) || self.val_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config("split fractions must be in [0, 1] and sum below 1".into()));
        }
        let s = self.sizes();
        if s.train == 0 || s.test == 0 {
            return Err(Error::Config(format!(
                "{} scenarios leave {} for training and {} for testing; both need at least one",
                self.count, s.train, s.test
            )));
        }
        Ok(())
    }
}

/// One matrix axis: a dotted config key and the values it sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub splits: SplitConfig,
    pub scenarios: ScenarioParams,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub sim: SimulatorConfig,
    pub rollout: RolloutConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub matrix: MatrixConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            out_dir: PathBuf::from("runs/default"),
            seed: 1,
            jobs: 0,
            splits: SplitConfig::default(),
            scenarios: ScenarioParams::default(),
            policy: PolicyConfig::default(),
            pretrain: PretrainConfig::default(),
            sim: SimulatorConfig::default(),
            rollout: RolloutConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            matrix: MatrixConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every section. Seeds must fit in a TOML integer.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("experiment name must not be empty".into()));
        }
        for (what, s) in [
            ("seed", self.seed),
            ("pretrain.seed", self.pretrain.seed),
            ("sim.seed", self.sim.seed),
            ("eval.seed", self.eval.seed),
        ] {
            if s > i64::MAX as u64 {
                return Err(Error::Config(format!("{what} {s} exceeds {}", i64::MAX)));
            }
        }
        self.splits.validate()?;
        self.scenarios.validate()?;
        self.policy.validate()?;
        if self.pretrain.steps == 0 || self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretraining needs steps and batch size >= 1".into()));
        }
        if !(self.pretrain.lr >= 0.0) || !(0.0..1.0).contains(&self.pretrain.momentum) || !(self.pretrain.clip_norm >= 0.0) {
            return Err(Error::Config("pretrain lr and clip norm must be >= 0 and momentum in [0, 1)".into()));
        }
        self.sim.validate()?;
        let horizon = match self.policy.family {
            crate::policy::model::Family::Discrete => 1,
            crate::policy::model::Family::Trajectory => self.policy.horizon,
        };
        self.rollout.validate(self.policy.family, horizon)?;
        // Zero steps is a valid experiment: fine-tuning is skipped.
        if self.train.steps > 0 {
            self.train.validate()?;
        }
        self.eval.validate()?;
        Ok(())
    }

    /// Hash of everything that influences results. Output location and
    /// thread count are left out.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.jobs = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Applies `key = value` where `key` is a dotted path to an existing field.
    pub fn with_override(&self, key: &str, value: &toml::Value) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
            if i + 1 == parts.len() {
                // Unset optional fields are absent from the tree; an unknown
                // leaf is rejected when the result is parsed back.
                table.insert((*part).to_string(), value.clone());
                break;
            }
            node = table
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
        }
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("override {key}: {}", e.message())))
    }
}
