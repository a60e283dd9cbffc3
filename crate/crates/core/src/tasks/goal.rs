use std::sync::Arc;

use super::{
    choose_direction, choose_position, direction_query, metrics, seeds, EpisodeResult, Policy,
    Termination,
};
use crate::interaction::{normalized_distance, Action, Env};
use crate::kinematics::{sample_surface, ArticulatedObject, JointState, Observation};
use crate::policy::PositionQuery;
use crate::sampler::{CemConfig, SelectionMode};
use crate::{rng, Error, Result};

/// Points moving more than this between the initial and goal observations
/// are marked changed, meters.
pub const DIFF_THRESHOLD: f64 = 0.02;

/// Upper bound on the directional steps of any goal task.
pub const MAX_GOAL_STEPS: usize = 15;

/// Changed-point mask between corresponding observations, dilated to whole
/// links.
pub fn diff_mask(obs_init: &Observation, obs_goal: &Observation) -> Result<Vec<bool>> {
    if obs_init.len() != obs_goal.len() {
        return Err(Error::Shape {
            expected: obs_init.len(),
            got: obs_goal.len(),
        });
    }
    let mut moved_links = std::collections::BTreeSet::new();
    for (a, b) in obs_init.points.iter().zip(&obs_goal.points) {
        if (a.position - b.position).norm() > DIFF_THRESHOLD {
            moved_links.insert(a.link);
        }
    }
    Ok(obs_init
        .points
        .iter()
        .map(|p| moved_links.contains(&p.link))
        .collect())
}

pub fn diff_mask_filter(
    obs_init: &Observation,
    obs_goal: &Observation,
    scores: &[f64],
) -> Result<Vec<f64>> {
    let mask = diff_mask(obs_init, obs_goal)?;
    if mask.len() != scores.len() {
        return Err(Error::Shape {
            expected: mask.len(),
            got: scores.len(),
        });
    }
    Ok(mask
        .iter()
        .zip(scores)
        .map(|(&m, &s)| if m { s } else { 0.0 })
        .collect())
}

/// Goal-conditioned task: bring the object from `j_init` to `j_goal`.
#[derive(Clone, Debug)]
pub struct GoalTask {
    pub id: String,
    pub object: Arc<ArticulatedObject>,
    pub j_init: JointState,
    pub j_goal: JointState,
    /// Sampling seed shared by the initial and goal observations.
    pub obs_seed: u64,
    pub budget: usize,
    pub obs_goal: Arc<Observation>,
}

impl GoalTask {
    pub fn new(
        id: impl Into<String>,
        object: Arc<ArticulatedObject>,
        j_init: JointState,
        j_goal: JointState,
        obs_seed: u64,
        budget: usize,
    ) -> Result<Self> {
        let obs_goal = sample_surface(&object, &j_goal, object.surface_sample_count, obs_seed)?;
        sample_surface(&object, &j_init, 1, obs_seed)?;
        Ok(Self {
            id: id.into(),
            object,
            j_init,
            j_goal,
            obs_seed,
            budget: budget.min(MAX_GOAL_STEPS),
            obs_goal: Arc::new(obs_goal),
        })
    }

    /// Normalized goal error of an end state.
    pub fn error(&self, j_end: &JointState) -> Result<(f64, bool)> {
        metrics::goal_error(j_end, &self.j_init, &self.j_goal, &self.object.deltas())
    }
}

/// Runs one goal-conditioned episode. The initial-observation slot of every
/// direction query holds the goal observation, and selection looks for
/// backward-in-time actions with respect to it.
pub fn goal_episode(task: &GoalTask, policy: &Policy, seed: u64) -> Result<EpisodeResult> {
    run_goal(task, policy, seed, None)
}

fn run_goal(
    task: &GoalTask,
    policy: &Policy,
    seed: u64,
    forced_grasp: Option<usize>,
) -> Result<EpisodeResult> {
    let object = task.object.clone();
    let mut env = Env::new(object.clone(), task.j_init.clone(), task.obs_seed, seed)?;
    let obs_goal = task.obs_goal.clone();
    let done = |transitions, termination| EpisodeResult {
        object_id: object.id.clone(),
        transitions,
        termination,
        deltas: object.deltas(),
    };

    let obs = env.observation().clone();
    let raw = policy.scorer.score_positions(&PositionQuery {
        obs: &obs,
        object: &object,
        state: env.state(),
    })?;
    let filtered = diff_mask_filter(&obs, &obs_goal, &raw)?;
    let chosen = match forced_grasp {
        Some(i) => Some(i),
        None => choose_position(policy, &filtered, seeds::position(seed), true),
    };
    let Some(idx) = chosen else {
        return Ok(done(vec![], Termination::NoValidPosition));
    };
    let mut transitions = vec![env.step(Action::Grasp {
        position: obs.points[idx].position,
    })?];
    let mut previous = None;
    for step in 1..=task.budget {
        let q = direction_query(&env, &obs_goal, &task.j_goal);
        let choice = choose_direction(
            policy,
            &q,
            SelectionMode::Goal,
            previous,
            seeds::cem(seed, step),
            seeds::epsilon(seed, step),
        )?;
        let Some(dir) = choice.direction else {
            return Ok(done(transitions, Termination::GoalTerminated));
        };
        transitions.push(env.step(Action::Move { direction: dir })?);
        previous = Some(dir);
    }
    Ok(done(transitions, Termination::BudgetExhausted))
}

/// Changed point with the largest lever radius: the grasp that turns a
/// revolute joint least per step. `None` when no changed point is on a
/// revolute joint.
fn slowest_grasp(task: &GoalTask) -> Result<Option<usize>> {
    let obs = crate::kinematics::sample_surface(
        &task.object,
        &task.j_init,
        task.object.surface_sample_count,
        task.obs_seed,
    )?;
    let mask = diff_mask(&obs, &task.obs_goal)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in obs.points.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        if let Ok(t) = crate::kinematics::joint_tangent(&task.object, &task.j_init, p) {
            if let Some(r) = t.lever_radius {
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((i, r));
                }
            }
        }
    }
    Ok(best.map(|(i, _)| i))
}

/// Two tasks per joint: lower limit to upper and upper to lower, other joints
/// at their lower limits. When the oracle cannot finish within `budget`
/// from the limit, the initial state is pulled toward the goal in steps of a
/// tenth of the joint threshold until every construction episode succeeds,
/// including one grasping at the largest lever radius.
pub fn build_goal_tasks(
    object: &Arc<ArticulatedObject>,
    budget: usize,
    cem: &CemConfig,
    seed: u64,
) -> Result<Vec<GoalTask>> {
    const CONSTRUCTION_RUNS: u64 = 16;
    let budget = budget.min(MAX_GOAL_STEPS);
    let policy = Policy::oracle(*cem);
    let lower = object.lower_state();
    let mut tasks = Vec::new();
    for k in 0..object.dof() {
        let joint = object.joint(k);
        for (dir, (from, to)) in [
            (joint.limits[0], joint.limits[1]),
            (joint.limits[1], joint.limits[0]),
        ]
        .into_iter()
        .enumerate()
        {
            let id = format!(
                "{}/j{}/{}",
                object.id,
                k,
                if dir == 0 { "open" } else { "close" }
            );
            let task_seed = rng::derive(seed, &[rng::tag(&id)]);
            let mut j_goal = lower.clone();
            j_goal[k] = to;
            let sign = (to - from).signum();
            let mut pull = 0usize;
            let task = loop {
                let mut j_init = lower.clone();
                j_init[k] = from + sign * pull as f64 * 0.1 * joint.delta;
                if normalized_distance(&object.deltas(), &j_init, &j_goal)? < 1.0 {
                    break None;
                }
                let t = GoalTask::new(
                    &id,
                    object.clone(),
                    j_init,
                    j_goal.clone(),
                    task_seed,
                    budget,
                )?;
                let mut ok = true;
                let slow = slowest_grasp(&t)?;
                let runs = (0..CONSTRUCTION_RUNS)
                    .map(|r| (r, None))
                    .chain(slow.map(|g| (CONSTRUCTION_RUNS, Some(g))));
                for (r, grasp) in runs {
                    let res = run_goal(&t, &policy, rng::derive(task_seed, &[1000 + r]), grasp)?;
                    let end = res.final_state().unwrap_or(&t.j_init);
                    if !t.error(end)?.1 {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    break Some(t);
                }
                pull += 1;
            };
            if let Some(t) = task {
                tasks.push(t);
            }
        }
    }
    Ok(tasks)
}
