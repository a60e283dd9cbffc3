//! Exploration and goal-conditioned episodes, baseline selection rules, the
//! self-supervised training loop and evaluation metrics.

mod goal;
pub mod metrics;
mod train;

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use goal::{
    build_goal_tasks, diff_mask, diff_mask_filter, goal_episode, GoalTask, DIFF_THRESHOLD,
};
pub use train::{run_training, sequence_length, EpochLog, TrainConfig, TrainingRun};

use crate::interaction::{label_positions, Action, Env, Transition};
use crate::kinematics::{SurfacePoint, Vec3};
use crate::policy::{DirectionQuery, PositionQuery, Scorer};
use crate::sampler::{
    argmax_by, cem_search, select_direction, CemConfig, Prediction, SelectionMode,
};
use crate::{rng, Error, Result};

/// Which selection rule turns scored candidates into an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Uniformly random grasp point and candidate.
    Random,
    /// Full rule, but the scorer never sees the initial or goal observation.
    SingleStep,
    /// Random among candidates of the wanted AoT class, ignoring distance.
    AotOnly,
    /// Argmax of the signed product of distance and expected AoT.
    SignedDist,
    /// Single-step scoring plus a filter dropping candidates more than 90
    /// degrees from the previous action.
    HeuristicFilter,
    /// Full rule over the kinematic oracle.
    Oracle,
    /// Full rule over the trained model.
    Learned,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Random,
        BaselineKind::SingleStep,
        BaselineKind::AotOnly,
        BaselineKind::SignedDist,
        BaselineKind::HeuristicFilter,
        BaselineKind::Oracle,
        BaselineKind::Learned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::SingleStep => "single_step",
            BaselineKind::AotOnly => "aot_only",
            BaselineKind::SignedDist => "signed_dist",
            BaselineKind::HeuristicFilter => "heuristic_filter",
            BaselineKind::Oracle => "oracle",
            BaselineKind::Learned => "learned",
        }
    }

    fn ignores_history(self) -> bool {
        matches!(
            self,
            BaselineKind::SingleStep | BaselineKind::HeuristicFilter
        )
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// A selection rule, the scorer it reads, and exploration rates.
#[derive(Clone, Debug)]
pub struct Policy {
    pub kind: BaselineKind,
    pub scorer: Scorer,
    pub cem: CemConfig,
    pub eps_position: f64,
    pub eps_direction: f64,
}

impl Policy {
    /// Greedy policy of the given kind. Every kind except `Learned` scores
    /// with the oracle unless `scorer` says otherwise.
    pub fn new(kind: BaselineKind, scorer: Scorer, cem: CemConfig) -> Self {
        Self {
            kind,
            scorer,
            cem,
            eps_position: 0.0,
            eps_direction: 0.0,
        }
    }

    pub fn oracle(cem: CemConfig) -> Self {
        Self::new(BaselineKind::Oracle, Scorer::Oracle, cem)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BudgetExhausted,
    GoalTerminated,
    NoValidPosition,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::GoalTerminated => "goal_terminated",
            Termination::NoValidPosition => "no_valid_position",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub object_id: String,
    pub transitions: Vec<Transition>,
    pub termination: Termination,
    pub deltas: Vec<f64>,
}

impl EpisodeResult {
    /// Directional steps executed (the grasp is not counted).
    pub fn steps(&self) -> usize {
        self.transitions.iter().filter(|t| !t.is_grasp()).count()
    }

    pub fn single_action_effects(&self) -> Vec<f64> {
        metrics::single_action_effect(&self.transitions, &self.deltas).unwrap_or_default()
    }

    pub fn mean_effect(&self) -> f64 {
        metrics::mean(&self.single_action_effects())
    }

    pub fn unique_ratio(&self) -> Option<f64> {
        metrics::trajectory_unique_ratio(&self.transitions, &self.deltas).ok()
    }

    pub fn final_state(&self) -> Option<&crate::kinematics::JointState> {
        self.transitions.last().map(|t| &t.j_curr)
    }
}

/// Direction-mode schedule of an exploration episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreMode {
    /// First half forward, second half backward.
    Contradictory,
    /// Every step forward.
    Forward,
}

/// Seeds for the independent random choices of an episode.
pub(crate) mod seeds {
    use crate::rng::derive;

    pub fn observation(s: u64) -> u64 {
        derive(s, &[0])
    }
    pub fn position(s: u64) -> u64 {
        derive(s, &[1])
    }
    pub fn cem(s: u64, step: usize) -> u64 {
        derive(s, &[2, step as u64])
    }
    pub fn epsilon(s: u64, step: usize) -> u64 {
        derive(s, &[3, step as u64])
    }
}

/// Index of the maximum score; ties broken uniformly at random.
fn argmax_random_tie(scores: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let best = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let ties: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] >= best - 1e-12)
        .collect();
    Some(ties[rng.random_range(0..ties.len())])
}

/// Chooses a grasp point index. Returns `None` when every score is zero and
/// `require_positive` is set.
pub(crate) fn choose_position(
    policy: &Policy,
    scores: &[f64],
    seed: u64,
    require_positive: bool,
) -> Option<usize> {
    let mut rng = rng::from_seed(seed);
    let explore = rng.random::<f64>() < policy.eps_position;
    if require_positive && scores.iter().all(|&s| !(s > 0.0)) {
        return None;
    }
    if policy.kind == BaselineKind::Random || explore {
        let pool: Vec<usize> = if require_positive {
            (0..scores.len()).filter(|&i| scores[i] > 0.0).collect()
        } else {
            (0..scores.len()).collect()
        };
        return Some(pool[rng.random_range(0..pool.len())]);
    }
    argmax_random_tie(scores, &mut rng)
}

/// Outcome of one direction decision.
#[derive(Clone, Debug)]
pub struct DirectionChoice {
    pub direction: Option<Vec3>,
    pub terminate: bool,
    pub candidates: Vec<Vec3>,
    pub predictions: Vec<Prediction>,
}

/// Scores CEM candidates for the current step and applies the policy's
/// selection rule.
pub fn choose_direction(
    policy: &Policy,
    query: &DirectionQuery,
    mode: SelectionMode,
    previous: Option<Vec3>,
    cem_seed: u64,
    eps_seed: u64,
) -> Result<DirectionChoice> {
    let mut rng = rng::from_seed(eps_seed);
    let explore = rng.random::<f64>() < policy.eps_direction;
    if explore {
        // no scoring needed for a random step
        let d = crate::sampler::uniform_directions(1, rng.random()).directions[0];
        return Ok(DirectionChoice {
            direction: Some(d),
            terminate: false,
            candidates: vec![d],
            predictions: vec![],
        });
    }
    let single;
    let q = if policy.kind.ignores_history() {
        single = DirectionQuery {
            obs_ref: query.obs_curr,
            ref_state: query.state,
            ..*query
        };
        &single
    } else {
        query
    };
    let search = cem_search(&policy.cem, mode, cem_seed, |dirs| {
        policy.scorer.score_directions(q, dirs)
    })?;
    let preds = &search.predictions;
    let target = mode.target();
    let pick_random =
        |rng: &mut crate::rng::Rng, pool: &[usize]| pool[rng.random_range(0..pool.len())];
    let index = match policy.kind {
        BaselineKind::Random => Some(rng.random_range(0..preds.len())),
        BaselineKind::AotOnly => {
            let pool: Vec<usize> = (0..preds.len())
                .filter(|&i| preds[i].class() == target)
                .collect();
            if !pool.is_empty() {
                Some(pick_random(&mut rng, &pool))
            } else if mode == SelectionMode::Goal {
                None
            } else {
                Some(rng.random_range(0..preds.len()))
            }
        }
        BaselineKind::SignedDist => {
            let i = argmax_by(preds, |_| true, |p| p.cem_score(mode)).unwrap();
            if mode == SelectionMode::Goal && !(preds[i].cem_score(mode) > 0.0) {
                None
            } else {
                Some(i)
            }
        }
        BaselineKind::HeuristicFilter => {
            let keep: Vec<bool> = search
                .directions
                .iter()
                .map(|d| previous.is_none_or(|p| d.dot(&p) >= 0.0))
                .collect();
            let masked: Vec<Prediction> = preds
                .iter()
                .zip(&keep)
                .map(|(p, &k)| {
                    if k {
                        *p
                    } else {
                        Prediction {
                            dist: f64::NEG_INFINITY,
                            aot: [0.0, 1.0, 0.0],
                        }
                    }
                })
                .collect();
            let s = select_direction(&masked, mode)?;
            s.index.filter(|&i| keep[i] || mode != SelectionMode::Goal)
        }
        BaselineKind::SingleStep | BaselineKind::Oracle | BaselineKind::Learned => {
            select_direction(preds, mode)?.index
        }
    };
    Ok(DirectionChoice {
        direction: index.map(|i| search.directions[i]),
        terminate: index.is_none(),
        candidates: search.directions,
        predictions: search.predictions,
    })
}

fn direction_query<'a>(
    env: &'a Env,
    obs_ref: &'a crate::Observation,
    ref_state: &'a crate::JointState,
) -> DirectionQuery<'a> {
    DirectionQuery {
        obs_curr: env.observation(),
        obs_ref,
        object: env.object(),
        state: env.state(),
        ref_state,
        grasp: env.grasp_point(),
    }
}

/// Grasps, then runs `length` directional steps. Position labels are filled
/// in before returning.
pub fn explore_episode(
    env: &mut Env,
    policy: &Policy,
    length: usize,
    mode: ExploreMode,
    seed: u64,
) -> Result<EpisodeResult> {
    if length < 2 {
        return Err(Error::invalid("exploration length must be >= 2"));
    }
    let obs = env.observation().clone();
    let scores = policy.scorer.score_positions(&PositionQuery {
        obs: &obs,
        object: env.object(),
        state: env.state(),
    })?;
    let idx = choose_position(policy, &scores, seeds::position(seed), false)
        .ok_or_else(|| Error::Environment("no surface points".into()))?;
    explore_from(env, policy, idx, length, mode, seed)
}

/// Exploration from a fixed grasp point: grasps point `grasp` of the current
/// observation, then runs `length` directional steps.
pub fn explore_from(
    env: &mut Env,
    policy: &Policy,
    grasp: usize,
    length: usize,
    mode: ExploreMode,
    seed: u64,
) -> Result<EpisodeResult> {
    if length < 2 {
        return Err(Error::invalid("exploration length must be >= 2"));
    }
    let obs = env.observation().clone();
    let idx = grasp;
    if idx >= obs.points.len() {
        return Err(Error::invalid(format!("grasp index {idx} out of range")));
    }
    let mut transitions = vec![env.step(Action::Grasp {
        position: obs.points[idx].position,
    })?];
    let obs_init = env.initial_observation().clone();
    let init = env.init_state().clone();
    let mut previous = None;
    for step in 1..=length {
        let sel = match mode {
            ExploreMode::Forward => SelectionMode::Forward,
            ExploreMode::Contradictory if step <= length / 2 => SelectionMode::Forward,
            ExploreMode::Contradictory => SelectionMode::Backward,
        };
        let q = direction_query(env, &obs_init, &init);
        let choice = choose_direction(
            policy,
            &q,
            sel,
            previous,
            seeds::cem(seed, step),
            seeds::epsilon(seed, step),
        )?;
        // exploration modes always act
        let dir = choice
            .direction
            .expect("exploration selection always returns a direction");
        transitions.push(env.step(Action::Move { direction: dir })?);
        previous = Some(dir);
    }
    label_positions(&mut transitions);
    Ok(EpisodeResult {
        object_id: env.object().id.clone(),
        transitions,
        termination: Termination::BudgetExhausted,
        deltas: env.deltas().to_vec(),
    })
}

/// Grasp point an episode attached to, if any.
pub fn grasped_point(result: &EpisodeResult) -> Option<SurfacePoint> {
    let t = result.transitions.first()?;
    let i = t.grasp_index?;
    Some(t.obs_prev.points[i])
}
