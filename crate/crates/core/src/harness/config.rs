//! Experiment configuration. Every knob of a run lives in one TOML document;
//! nothing is read from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::objects::ObjectSuiteSpec;
use crate::sampler::CemConfig;
use crate::tasks::{BaselineKind, ExploreMode, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    /// Episodes per policy; object `i % suite_len` is used for episode `i`.
    pub episodes: usize,
    /// Directional steps per episode.
    pub length: usize,
    pub mode: ExploreMode,
    /// Write every explored transition to `trajectories.jsonl`.
    pub write_trajectories: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            length: 8,
            mode: ExploreMode::Forward,
            write_trajectories: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalConfig {
    /// Evaluation episodes per goal task and policy.
    pub episodes_per_task: usize,
    /// Replaces every object's category budget.
    pub budget: Option<usize>,
}

impl Default for GoalConfig {
    fn default() -> Self {
        Self {
            episodes_per_task: 1,
            budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Directional steps per generated trace.
    pub steps: usize,
    /// Traces per object and trace kind.
    pub traces_per_object: usize,
    /// Probability of a random step in the noisy traces.
    pub noisy_eps: f64,
    /// Ignore the known joint kind and pick it from the prismatic residual.
    pub blind: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            traces_per_object: 4,
            noisy_eps: 0.2,
            blind: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Object directory, single object file or suite spec (`.toml`),
    /// relative to the config file. Takes precedence over `objects`.
    pub suite: Option<PathBuf>,
    /// Inline suite spec used when `suite` is absent.
    pub objects: Option<ObjectSuiteSpec>,
    pub policies: Vec<BaselineKind>,
    /// Checkpoint for the `learned` policy, relative to the config file.
    pub model: Option<PathBuf>,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub cem: CemConfig,
    pub explore: ExploreConfig,
    pub goal: GoalConfig,
    pub infer: InferConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            suite: None,
            objects: None,
            policies: vec![BaselineKind::Oracle],
            model: None,
            workers: 1,
            cem: CemConfig::default(),
            explore: ExploreConfig::default(),
            goal: GoalConfig::default(),
            infer: InferConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.suite);
        rebase(&mut cfg.model);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cem.validate()?;
        self.train.validate()?;
        if self.policies.is_empty() {
            return Err(Error::Config("policies must not be empty".into()));
        }
        if self.explore.length < 2 || self.explore.episodes == 0 {
            return Err(Error::Config(
                "explore: need length >= 2 and episodes >= 1".into(),
            ));
        }
        if self.goal.episodes_per_task == 0 || self.goal.budget == Some(0) {
            return Err(Error::Config(
                "goal: episodes_per_task and budget must be positive".into(),
            ));
        }
        if self.infer.steps < 3 || self.infer.traces_per_object == 0 {
            return Err(Error::Config(
                "infer: need steps >= 3 and traces_per_object >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.infer.noisy_eps) {
            return Err(Error::Config("infer.noisy_eps must lie in [0, 1]".into()));
        }
        if let Some(o) = &self.objects {
            o.validate()?;
        }
        Ok(())
    }

    /// Fails for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
