//! Orchestration of the experiment commands over a worker pool.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::objects::{generate, load_suite, Category, ObjectSuiteSpec};
use super::report::ResultRow;
use crate::interaction::log::{read_trajectory, TrajectoryWriter};
use crate::interaction::{Env, Transition};
use crate::kinematics::{joint_tangent, ArticulatedObject, JointKind, JointState, Observation};
use crate::policy::{PolicyModel, Scorer};
use crate::structure::{self, ActionTrace, ArticulationEstimate};
use crate::tasks::{
    build_goal_tasks, explore_episode, goal_episode, BaselineKind, EpisodeResult, GoalTask, Policy,
};
use crate::{rng, Error, Result};

/// Shared interruption flag, checked before every episode.
#[derive(Clone, Debug, Default)]
pub struct Cancel(Arc<AtomicBool>);

impl Cancel {
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// A loaded config with its suite and, for the learned policy, its model.
#[derive(Clone)]
pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub suite: Vec<Arc<ArticulatedObject>>,
    pub model: Option<Arc<PolicyModel>>,
    pub cancel: Cancel,
}

impl RunContext {
    /// Resolves the suite: the `suite` path if set, else the inline
    /// `objects` spec, else two objects of every category generated from
    /// the run seed.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let suite = match (&cfg.suite, &cfg.objects) {
            (Some(p), _) => load_suite(p).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("suite {}: {io}", p.display())),
                other => other,
            })?,
            (None, Some(spec)) => generate(spec)?,
            (None, None) => generate(&ObjectSuiteSpec::twelve(cfg.seed))?,
        };
        let model = match &cfg.model {
            Some(p) => Some(Arc::new(PolicyModel::load(p).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("model {}: {io}", p.display())),
                other => other,
            })?)),
            None => None,
        };
        Ok(Self {
            cfg,
            suite,
            model,
            cancel: Cancel::default(),
        })
    }

    pub fn with_suite(cfg: ExperimentConfig, suite: Vec<Arc<ArticulatedObject>>) -> Result<Self> {
        cfg.validate()?;
        if suite.is_empty() {
            return Err(Error::Config("suite is empty".into()));
        }
        Ok(Self {
            cfg,
            suite,
            model: None,
            cancel: Cancel::default(),
        })
    }

    pub fn policy(&self, kind: BaselineKind) -> Result<Policy> {
        let scorer = match kind {
            BaselineKind::Learned => Scorer::Learned(self.model.clone().ok_or_else(|| {
                Error::Config("the learned policy needs `model` (a checkpoint path)".into())
            })?),
            _ => Scorer::Oracle,
        };
        Ok(Policy::new(kind, scorer, self.cfg.cem))
    }

    fn policies(&self) -> Result<Vec<Policy>> {
        self.cfg.policies.iter().map(|&k| self.policy(k)).collect()
    }

    /// Runs `f` on a pool of `cfg.workers` threads.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::Environment(e.to_string()))?;
        Ok(pool.install(f))
    }
}

/// Rows of completed episodes, plus whether the run was cut short.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub interrupted: bool,
}

fn row(result: &EpisodeResult, task: String, policy: &Policy, episode: usize) -> ResultRow {
    ResultRow {
        object_id: result.object_id.clone(),
        task,
        policy: policy.kind.name().into(),
        episode,
        steps: result.steps(),
        mean_effect: result.mean_effect(),
        unique_ratio: None,
        e_goal: None,
        success: None,
        termination: result.termination.name().into(),
    }
}

/// Exploration episodes for every configured policy. Episode `i` uses object
/// `i % suite_len` from its lower limits, with the same seeds for every policy.
pub fn explore(ctx: &RunContext, keep_episodes: bool) -> Result<(RunOutput, Vec<EpisodeResult>)> {
    let cfg = &ctx.cfg.explore;
    let policies = ctx.policies()?;
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..cfg.episodes).map(move |i| (p, i)))
        .collect();
    let results: Vec<Option<(ResultRow, Option<EpisodeResult>)>> = ctx.install(|| {
        jobs.par_iter()
            .map(|&(p, i)| {
                if ctx.cancel.is_cancelled() {
                    return Ok(None);
                }
                let object = &ctx.suite[i % ctx.suite.len()];
                let base = rng::derive(ctx.cfg.seed, &[rng::tag("explore"), i as u64]);
                // episode ids stay unique across policies in trajectory logs
                let id = (p * cfg.episodes + i) as u64;
                let mut env = Env::new(
                    object.clone(),
                    object.lower_state(),
                    rng::derive(base, &[0]),
                    id,
                )?;
                let res = explore_episode(
                    &mut env,
                    &policies[p],
                    cfg.length,
                    cfg.mode,
                    rng::derive(base, &[1]),
                )?;
                let mut r = row(&res, "explore".into(), &policies[p], i);
                r.unique_ratio = res.unique_ratio();
                Ok(Some((r, keep_episodes.then_some(res))))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let interrupted = results.iter().any(Option::is_none);
    let (rows, episodes): (Vec<_>, Vec<_>) = results.into_iter().flatten().unzip();
    Ok((
        RunOutput { rows, interrupted },
        episodes.into_iter().flatten().collect(),
    ))
}

/// Step budget of goal tasks on `object`.
pub fn goal_budget(ctx: &RunContext, object: &ArticulatedObject) -> usize {
    ctx.cfg
        .goal
        .budget
        .or(object.step_budget)
        .unwrap_or_else(|| {
            object
                .category
                .as_deref()
                .and_then(|c| c.parse::<Category>().ok())
                .map_or(10, Category::default_budget)
        })
}

/// Goal tasks of every suite object, built with the oracle.
pub fn goal_tasks(ctx: &RunContext) -> Result<Vec<GoalTask>> {
    let per_object = ctx.install(|| {
        ctx.suite
            .par_iter()
            .map(|o| build_goal_tasks(o, goal_budget(ctx, o), &ctx.cfg.cem, ctx.cfg.seed))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(per_object.into_iter().flatten().collect())
}

fn task_label(task: &GoalTask) -> String {
    let suffix = task
        .id
        .strip_prefix(&format!("{}/", task.object.id))
        .unwrap_or(&task.id);
    format!("goal/{suffix}")
}

/// Goal-conditioned evaluation of every configured policy on `tasks`; the
/// seed of an episode depends only on the task and episode index.
pub fn eval_goal_tasks(ctx: &RunContext, tasks: &[GoalTask]) -> Result<RunOutput> {
    let policies = ctx.policies()?;
    let n = ctx.cfg.goal.episodes_per_task;
    let jobs: Vec<(usize, usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..tasks.len()).flat_map(move |t| (0..n).map(move |e| (p, t, e))))
        .collect();
    let results: Vec<Option<ResultRow>> = ctx.install(|| {
        jobs.par_iter()
            .map(|&(p, t, e)| {
                if ctx.cancel.is_cancelled() {
                    return Ok(None);
                }
                let task = &tasks[t];
                let seed = rng::derive(
                    ctx.cfg.seed,
                    &[rng::tag("goal"), rng::tag(&task.id), e as u64],
                );
                let res = goal_episode(task, &policies[p], seed)?;
                let (err, ok) = task.error(res.final_state().unwrap_or(&task.j_init))?;
                let mut r = row(&res, task_label(task), &policies[p], e);
                r.e_goal = Some(err);
                r.success = Some(ok);
                Ok(Some(r))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let interrupted = results.iter().any(Option::is_none);
    Ok(RunOutput {
        rows: results.into_iter().flatten().collect(),
        interrupted,
    })
}

pub fn eval_goal(ctx: &RunContext) -> Result<RunOutput> {
    let tasks = goal_tasks(ctx)?;
    eval_goal_tasks(ctx, &tasks)
}

/// Exploration and goal evaluation for every configured policy.
pub fn bench(ctx: &RunContext) -> Result<RunOutput> {
    let (mut out, _) = explore(ctx, false)?;
    if out.interrupted {
        return Ok(out);
    }
    let goal = eval_goal(ctx)?;
    out.rows.extend(goal.rows);
    out.interrupted = goal.interrupted;
    Ok(out)
}

/// Kind of generated trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    /// Exact joint tangent, half forward, half backward.
    Oracle,
    /// Exact tangent with uniformly random directions mixed in.
    Noisy,
    /// Read from an existing trajectory log.
    Logged,
}

/// One structure-inference result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRecord {
    pub episode_id: u64,
    pub object_id: String,
    pub joint: Option<usize>,
    pub source: TraceSource,
    pub steps: usize,
    pub estimate: Option<ArticulationEstimate>,
    pub angle_error_deg: Option<f64>,
    pub point_error_m: Option<f64>,
    pub error: Option<String>,
}

/// Grasp candidates on the link of joint `k` that the oracle could move.
fn joint_points(
    object: &ArticulatedObject,
    state: &JointState,
    obs: &Observation,
    k: usize,
) -> Vec<usize> {
    let link = object.joint_links[k];
    obs.points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.link == link && joint_tangent(object, state, p).is_ok())
        .map(|(i, _)| i)
        .collect()
}

fn mid_state(object: &ArticulatedObject) -> JointState {
    JointState::new(
        object
            .joints()
            .map(|j| 0.5 * (j.limits[0] + j.limits[1]))
            .collect(),
    )
}

/// Generates oracle and noisy traces for every revolute and prismatic joint.
/// Episodes start at mid-range and grasp a random movable point of the joint's
/// link. Noisy traces replace each tangent step by a random direction with
/// probability `infer.noisy_eps`.
pub fn generate_traces(ctx: &RunContext) -> Result<Vec<(TraceSource, Vec<Transition>)>> {
    let icfg = &ctx.cfg.infer;
    let mut jobs = Vec::new();
    for (o, object) in ctx.suite.iter().enumerate() {
        for k in 0..object.dof() {
            if object.joint(k).kind() == JointKind::Path {
                continue;
            }
            for r in 0..icfg.traces_per_object {
                for source in [TraceSource::Oracle, TraceSource::Noisy] {
                    jobs.push((o, k, r, source));
                }
            }
        }
    }
    ctx.install(|| {
        jobs.par_iter()
            .enumerate()
            .filter(|_| !ctx.cancel.is_cancelled())
            .map(|(id, &(o, k, r, source))| {
                let object = &ctx.suite[o];
                let seed = rng::derive(
                    ctx.cfg.seed,
                    &[rng::tag("infer"), o as u64, k as u64, r as u64],
                );
                let state = mid_state(object);
                let env = Env::new(
                    object.clone(),
                    state.clone(),
                    rng::derive(seed, &[0]),
                    id as u64,
                )?;
                let pool = joint_points(object, &state, env.observation(), k);
                if pool.is_empty() {
                    return Err(Error::Environment(format!(
                        "{}: joint {k} has no graspable point",
                        object.id
                    )));
                }
                let grasp =
                    pool[rng::from_seed(rng::derive(seed, &[1])).random_range(0..pool.len())];
                let g = env.observation().points[grasp];
                let eps = match source {
                    TraceSource::Oracle => 0.0,
                    TraceSource::Noisy | TraceSource::Logged => icfg.noisy_eps,
                };
                let transitions = structure::noisy_tangent_trace(
                    object.clone(),
                    state,
                    &g,
                    icfg.steps,
                    rng::derive(seed, &[0]),
                    eps,
                    rng::derive(seed, &[2]),
                )?
                .into_iter()
                .map(|mut t| {
                    t.episode_id = id as u64;
                    t
                })
                .collect();
                Ok((source, transitions))
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Infers the joint of every episode in a transition stream.
pub fn infer_episodes(
    ctx: &RunContext,
    episodes: &[(TraceSource, Vec<Transition>)],
) -> Vec<AxisRecord> {
    let by_id: BTreeMap<&str, &Arc<ArticulatedObject>> =
        ctx.suite.iter().map(|o| (o.id.as_str(), o)).collect();
    episodes
        .iter()
        .filter(|(_, ts)| !ts.is_empty())
        .map(|(source, ts)| {
            let first = &ts[0];
            let mut rec = AxisRecord {
                episode_id: first.episode_id,
                object_id: first.object_id.clone(),
                joint: None,
                source: *source,
                steps: 0,
                estimate: None,
                angle_error_deg: None,
                point_error_m: None,
                error: None,
            };
            let object = by_id.get(first.object_id.as_str());
            let joint = first
                .grasp_index
                .map(|i| first.obs_prev.points[i].link)
                .and_then(|l| object.and_then(|o| o.links[l].joint_index));
            rec.joint = joint;
            let result = (|| -> Result<()> {
                let trace = ActionTrace::from_transitions(ts)?;
                rec.steps = trace.len();
                let kind = match (ctx.cfg.infer.blind, object, joint) {
                    (false, Some(o), Some(k)) => Some(o.joint(k).kind()),
                    _ => None,
                };
                let est = match kind {
                    Some(JointKind::Revolute) => structure::infer_revolute(&trace)?,
                    Some(JointKind::Prismatic) => structure::infer_prismatic(&trace)?,
                    Some(JointKind::Path) => {
                        return Err(Error::invalid("path joints have no single axis"))
                    }
                    None => structure::infer_blind(&trace)?,
                };
                rec.estimate = Some(est);
                if let (Some(o), Some(k)) = (object, joint) {
                    let truth = structure::ground_truth(o, k, &first.j_init)?;
                    if let Ok((angle, dist)) = structure::axis_error(&est, &truth) {
                        rec.angle_error_deg = Some(angle);
                        rec.point_error_m =
                            (est.kind == structure::ArticulationKind::Revolute).then_some(dist);
                    } else {
                        rec.error = Some("inferred kind differs from the true joint kind".into());
                    }
                }
                Ok(())
            })();
            if let Err(e) = result {
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect()
}

/// Writes traces to `path` and returns them grouped by episode as read back
/// from disk.
pub fn log_traces(
    path: &Path,
    traces: &[(TraceSource, Vec<Transition>)],
) -> Result<Vec<(TraceSource, Vec<Transition>)>> {
    let mut w = TrajectoryWriter::create(path)?;
    let mut sources = BTreeMap::new();
    for (s, ts) in traces {
        for t in ts {
            w.write(t)?;
            sources.insert(t.episode_id, *s);
        }
    }
    w.flush()?;
    drop(w);
    Ok(group_episodes(read_trajectory(path)?, |id| {
        sources.get(&id).copied().unwrap_or(TraceSource::Logged)
    }))
}

pub fn group_episodes(
    transitions: Vec<Transition>,
    source: impl Fn(u64) -> TraceSource,
) -> Vec<(TraceSource, Vec<Transition>)> {
    let mut by_ep: BTreeMap<u64, Vec<Transition>> = BTreeMap::new();
    for t in transitions {
        by_ep.entry(t.episode_id).or_default().push(t);
    }
    by_ep.into_iter().map(|(id, ts)| (source(id), ts)).collect()
}

/// Mean angle error per (source, joint kind).
pub fn summarize_axes(records: &[AxisRecord]) -> BTreeMap<String, (usize, f64)> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let (Some(e), Some(a)) = (&r.estimate, r.angle_error_deg) {
            let key = format!(
                "{}/{}",
                serde_json::to_value(r.source).unwrap().as_str().unwrap(),
                serde_json::to_value(e.kind).unwrap().as_str().unwrap()
            );
            acc.entry(key).or_default().push(a);
        }
    }
    acc.into_iter()
        .map(|(k, v)| (k, (v.len(), crate::tasks::metrics::mean(&v))))
        .collect()
}
