use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{explore_episode, BaselineKind, ExploreMode, Policy};
use crate::interaction::{Env, ReplayBuffer, BUFFER_CAPACITY, DIRECTION_BATCH, POSITION_BATCH};
use crate::kinematics::{ArticulatedObject, JointState};
use crate::policy::{
    DirectionExample, EpsilonSchedule, ModelConfig, PolicyModel, PositionExample, Scorer,
};
use crate::sampler::CemConfig;
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub trajectories_per_epoch: usize,
    pub initial_length: usize,
    /// First epoch at which the sequence length grows.
    pub growth_start: usize,
    pub growth_every: usize,
    pub growth_step: usize,
    pub max_length: usize,
    /// Gradient steps per head per epoch.
    pub iterations_per_epoch: usize,
    pub eps_position: EpsilonSchedule,
    pub eps_direction: EpsilonSchedule,
    pub buffer_capacity: usize,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            trajectories_per_epoch: 16,
            initial_length: 4,
            growth_start: 1000,
            growth_every: 400,
            growth_step: 2,
            max_length: 20,
            iterations_per_epoch: 8,
            eps_position: EpsilonSchedule::POSITION,
            eps_direction: EpsilonSchedule::DIRECTION,
            buffer_capacity: BUFFER_CAPACITY,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_length < 2 || self.max_length < self.initial_length {
            return Err(Error::Config(
                "train: need 2 <= initial_length <= max_length".into(),
            ));
        }
        if self.growth_every == 0 {
            return Err(Error::Config("train.growth_every must be >= 1".into()));
        }
        if self.trajectories_per_epoch == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("train: empty epochs or buffer".into()));
        }
        self.model.validate()
    }
}

/// Directional steps per episode at `epoch`: the initial length until
/// `growth_start`, then one growth step at `growth_start` and another every
/// `growth_every` epochs, capped at `max_length`.
pub fn sequence_length(cfg: &TrainConfig, epoch: usize) -> usize {
    if epoch < cfg.growth_start {
        return cfg.initial_length;
    }
    let grown = 1 + (epoch - cfg.growth_start) / cfg.growth_every;
    (cfg.initial_length + grown * cfg.growth_step).min(cfg.max_length)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub length: usize,
    pub eps_position: f64,
    pub eps_direction: f64,
    pub position_loss: Option<f64>,
    pub dist_loss: Option<f64>,
    pub aot_loss: Option<f64>,
    pub degenerate_batches: usize,
    pub buffer_len: usize,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub model: PolicyModel,
    pub logs: Vec<EpochLog>,
}

fn random_state(object: &ArticulatedObject, rng: &mut impl Rng) -> JointState {
    JointState::new(
        object
            .joints()
            .map(|j| rng.random_range(j.limits[0]..=j.limits[1]))
            .collect(),
    )
}

/// Self-supervised training: every epoch collects contradictory-policy
/// episodes with the current model, then takes gradient steps on stratified
/// batches from the replay buffer. Training stops early when `on_epoch`
/// returns false; the model is returned as of the last finished epoch.
pub fn run_training(
    cfg: &TrainConfig,
    cem: &CemConfig,
    suite: &[Arc<ArticulatedObject>],
    seed: u64,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog) -> bool,
) -> Result<TrainingRun> {
    cfg.validate()?;
    cem.validate()?;
    if suite.is_empty() {
        return Err(Error::invalid("training suite is empty"));
    }
    let mut model = PolicyModel::new(cfg.model, rng::derive(seed, &[0]));
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let length = sequence_length(cfg, epoch);
        let policy = Policy {
            kind: BaselineKind::Learned,
            scorer: Scorer::Learned(Arc::new(model.clone())),
            cem: *cem,
            eps_position: cfg.eps_position.value(epoch),
            eps_direction: cfg.eps_direction.value(epoch),
        };
        let episodes: Vec<_> = (0..cfg.trajectories_per_epoch)
            .into_par_iter()
            .map(|i| {
                let ep_seed = rng::derive(seed, &[1, epoch as u64, i as u64]);
                let mut r = rng::from_seed(ep_seed);
                let object = &suite[r.random_range(0..suite.len())];
                let state = random_state(object, &mut r);
                let id = (epoch * cfg.trajectories_per_epoch + i) as u64;
                let mut env = Env::new(
                    object.clone(),
                    state,
                    super::seeds::observation(ep_seed),
                    id,
                )?;
                explore_episode(
                    &mut env,
                    &policy,
                    length,
                    ExploreMode::Contradictory,
                    ep_seed,
                )
            })
            .collect::<Result<_>>()?;
        for ep in episodes {
            buffer.extend(ep.transitions);
        }

        let mut log = EpochLog {
            epoch,
            length,
            eps_position: policy.eps_position,
            eps_direction: policy.eps_direction,
            position_loss: None,
            dist_loss: None,
            aot_loss: None,
            degenerate_batches: 0,
            buffer_len: buffer.len(),
        };
        let (mut pl, mut dl, mut al) = (Vec::new(), Vec::new(), Vec::new());
        for it in 0..cfg.iterations_per_epoch {
            let bseed = rng::derive(seed, &[2, epoch as u64, it as u64]);
            match buffer.sample_position_batch(POSITION_BATCH, bseed) {
                Ok(b) => {
                    log.degenerate_batches += usize::from(b.degenerate);
                    let ex: Vec<_> = b
                        .items
                        .iter()
                        .filter_map(|t| PositionExample::from_transition(t))
                        .collect();
                    pl.push(model.train_position_step(&ex));
                }
                Err(Error::EmptyBuffer) => {}
                Err(e) => return Err(e),
            }
            match buffer.sample_direction_batch(DIRECTION_BATCH, rng::derive(bseed, &[1])) {
                Ok(b) => {
                    log.degenerate_batches += usize::from(b.degenerate);
                    let ex: Vec<_> = b
                        .items
                        .iter()
                        .filter_map(|t| DirectionExample::from_transition(t))
                        .collect();
                    let l = model.train_direction_step(&ex);
                    dl.push(l.dist);
                    al.push(l.aot);
                }
                Err(Error::EmptyBuffer) => {}
                Err(e) => return Err(e),
            }
        }
        let avg = |v: &[f64]| (!v.is_empty()).then(|| super::metrics::mean(v));
        log.position_loss = avg(&pl);
        log.dist_loss = avg(&dl);
        log.aot_loss = avg(&al);
        let go_on = on_epoch(&log);
        logs.push(log);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                model.save(dir.join(format!("checkpoint-{:05}.json", epoch + 1)))?;
            }
        }
        if !go_on {
            break;
        }
    }
    Ok(TrainingRun { model, logs })
}
