use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::outcome::{compute_outcome, InteractionOutcome};
use crate::kinematics::{
    apply_displacement, sample_surface, ArticulatedObject, JointState, Observation, SurfacePoint,
    Vec3,
};
use crate::{Error, Result, STEP_LENGTH};

/// Largest distance between a requested grasp position and a sampled surface
/// point for suction to attach, meters.
pub const GRASP_RADIUS: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// First step of an episode: attach at a world position.
    Grasp { position: Vec3 },
    /// Every later step: move the end effector along a unit direction.
    Move { direction: Vec3 },
}

impl Action {
    pub fn direction(&self) -> Option<Vec3> {
        match self {
            Action::Move { direction } => Some(*direction),
            Action::Grasp { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub episode_id: u64,
    pub step_index: usize,
    pub object_id: String,
    pub action: Action,
    pub obs_prev: Arc<Observation>,
    pub obs_init: Arc<Observation>,
    pub j_init: JointState,
    pub j_prev: JointState,
    pub j_curr: JointState,
    pub outcome: InteractionOutcome,
    /// Sampled point in `obs_prev` that the grasp attached to (grasp steps).
    pub grasp_index: Option<usize>,
    /// Position-affordance label of a grasp step: whether the state changed
    /// significantly in any later step of its episode. Filled in once the
    /// episode ends.
    pub position_label: Option<bool>,
}

impl Transition {
    pub fn is_grasp(&self) -> bool {
        matches!(self.action, Action::Grasp { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum GraspState {
    None,
    Missed,
    Attached(SurfacePoint),
}

/// One object instance being manipulated. Owns its joint state and grasp.
#[derive(Clone, Debug)]
pub struct Env {
    object: Arc<ArticulatedObject>,
    deltas: Vec<f64>,
    state: JointState,
    init: JointState,
    grasp: GraspState,
    obs_seed: u64,
    episode_id: u64,
    step_index: usize,
    obs_init: Arc<Observation>,
    obs_curr: Arc<Observation>,
}

impl Env {
    /// Starts an episode at `state`. All observations of the episode are drawn
    /// with `obs_seed`, so their points correspond one to one.
    pub fn new(
        object: Arc<ArticulatedObject>,
        state: JointState,
        obs_seed: u64,
        episode_id: u64,
    ) -> Result<Self> {
        let obs = Arc::new(sample_surface(
            &object,
            &state,
            object.surface_sample_count,
            obs_seed,
        )?);
        if obs.is_empty() {
            return Err(Error::Environment("object has no surface points".into()));
        }
        Ok(Self {
            deltas: object.deltas(),
            object,
            init: state.clone(),
            state,
            grasp: GraspState::None,
            obs_seed,
            episode_id,
            step_index: 0,
            obs_init: obs.clone(),
            obs_curr: obs,
        })
    }

    pub fn object(&self) -> &Arc<ArticulatedObject> {
        &self.object
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn init_state(&self) -> &JointState {
        &self.init
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn obs_seed(&self) -> u64 {
        self.obs_seed
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn observation(&self) -> &Arc<Observation> {
        &self.obs_curr
    }

    pub fn initial_observation(&self) -> &Arc<Observation> {
        &self.obs_init
    }

    pub fn grasp_point(&self) -> Option<SurfacePoint> {
        match self.grasp {
            GraspState::Attached(p) => Some(p),
            _ => None,
        }
    }

    /// Observation of the same object at another state, without gripper and
    /// with this episode's sampling seed.
    pub fn observe_at(&self, state: &JointState) -> Result<Observation> {
        sample_surface(
            &self.object,
            state,
            self.object.surface_sample_count,
            self.obs_seed,
        )
    }

    fn refresh_observation(&mut self) -> Result<()> {
        let obs = self
            .observe_at(&self.state)?
            .with_gripper(self.grasp_point());
        self.obs_curr = Arc::new(obs);
        Ok(())
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        let obs_prev = self.obs_curr.clone();
        let j_prev = self.state.clone();
        let mut grasp_index = None;
        match action {
            Action::Grasp { position } => {
                if self.grasp != GraspState::None {
                    return Err(Error::invalid("episode already has a grasp"));
                }
                let (idx, dist) = obs_prev
                    .nearest(&position)
                    .ok_or_else(|| Error::Environment("empty observation".into()))?;
                grasp_index = Some(idx);
                self.grasp = if dist <= GRASP_RADIUS {
                    GraspState::Attached(obs_prev.points[idx])
                } else {
                    GraspState::Missed
                };
            }
            Action::Move { direction } => match self.grasp {
                GraspState::None => return Err(Error::invalid("move before grasp")),
                GraspState::Missed => {}
                GraspState::Attached(point) => {
                    let (next, moved) = apply_displacement(
                        &self.object,
                        &self.state,
                        &point,
                        &direction,
                        STEP_LENGTH,
                    )?;
                    self.state = next;
                    self.grasp = GraspState::Attached(moved);
                }
            },
        }
        self.refresh_observation()?;
        let outcome = compute_outcome(&self.deltas, &self.init, &j_prev, &self.state)?;
        let t = Transition {
            episode_id: self.episode_id,
            step_index: self.step_index,
            object_id: self.object.id.clone(),
            action,
            obs_prev,
            obs_init: self.obs_init.clone(),
            j_init: self.init.clone(),
            j_prev,
            j_curr: self.state.clone(),
            outcome,
            grasp_index,
            position_label: None,
        };
        self.step_index += 1;
        Ok(t)
    }
}

/// Sets the position label of every grasp step from the outcomes that follow
/// it in the same episode.
pub fn label_positions(episode: &mut [Transition]) {
    let mut changed_later = false;
    for t in episode.iter_mut().rev() {
        if t.is_grasp() {
            t.position_label = Some(changed_later);
        } else if t.outcome.r_aot != super::Aot::Still {
            changed_later = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::Aot;
    use crate::kinematics::{joint_tangent, BoxShape, Joint, LinkDef};

    fn door() -> Arc<ArticulatedObject> {
        Arc::new(
            ArticulatedObject::new(
                "door",
                vec![
                    LinkDef {
                        name: "base".into(),
                        parent: None,
                        boxes: vec![BoxShape::from_bounds([0.0, -0.4, 0.0], [0.8, 0.0, 1.0])],
                        joint: None,
                    },
                    LinkDef {
                        name: "door".into(),
                        parent: Some("base".into()),
                        boxes: vec![BoxShape::from_bounds([0.01, 0.0, 0.0], [0.8, 0.03, 1.0])],
                        joint: Some(Joint::revolute(Vec3::z(), Vec3::zeros(), [0.0, 1.5]).unwrap()),
                    },
                ],
            )
            .unwrap(),
        )
    }

    fn grasp_far_point(env: &mut Env, link: usize) -> SurfacePoint {
        let p = *env
            .observation()
            .points
            .iter()
            .filter(|p| p.link == link)
            .max_by(|a, b| a.position.x.total_cmp(&b.position.x))
            .unwrap();
        env.step(Action::Grasp {
            position: p.position,
        })
        .unwrap();
        p
    }

    #[test]
    fn base_grasp_never_moves() {
        let mut env = Env::new(door(), JointState::new(vec![0.5]), 1, 0).unwrap();
        grasp_far_point(&mut env, 0);
        for d in [Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z()] {
            let t = env.step(Action::Move { direction: d }).unwrap();
            assert_eq!(t.outcome.r_dist, 0.0);
            assert_eq!(t.outcome.r_aot, Aot::Still);
        }
    }

    #[test]
    fn door_opens_from_lower_limit() {
        let obj = door();
        let mut env = Env::new(obj.clone(), JointState::new(vec![0.0]), 1, 0).unwrap();
        let g = grasp_far_point(&mut env, 1);
        let tangent = joint_tangent(&obj, env.state(), &g).unwrap().direction;
        let t = env.step(Action::Move { direction: tangent }).unwrap();
        assert!(t.outcome.r_dist > obj.joint(0).delta);
        assert_eq!(t.outcome.r_aot, Aot::Forward);
    }

    #[test]
    fn door_at_upper_limit_is_clamped() {
        let obj = door();
        let mut env = Env::new(obj.clone(), JointState::new(vec![1.5]), 1, 0).unwrap();
        let g = grasp_far_point(&mut env, 1);
        let tangent = joint_tangent(&obj, env.state(), &g).unwrap().direction;
        let t = env.step(Action::Move { direction: tangent }).unwrap();
        assert!(t.outcome.r_dist <= obj.joint(0).delta);
        assert_eq!(t.outcome.r_aot, Aot::Still);
        assert_eq!(t.j_curr[0], 1.5);
    }

    #[test]
    fn grasp_miss_is_zero_motion() {
        let mut env = Env::new(door(), JointState::new(vec![0.0]), 1, 0).unwrap();
        let t = env
            .step(Action::Grasp {
                position: Vec3::new(5.0, 5.0, 5.0),
            })
            .unwrap();
        assert_eq!(t.outcome.r_aot, Aot::Still);
        assert!(env.grasp_point().is_none());
        let t = env
            .step(Action::Move {
                direction: Vec3::y(),
            })
            .unwrap();
        assert_eq!(t.outcome.r_dist, 0.0);
    }

    #[test]
    fn move_before_grasp_is_rejected() {
        let mut env = Env::new(door(), JointState::new(vec![0.0]), 1, 0).unwrap();
        assert!(env
            .step(Action::Move {
                direction: Vec3::y()
            })
            .is_err());
    }

    #[test]
    fn gripper_follows_link() {
        let obj = door();
        let mut env = Env::new(obj.clone(), JointState::new(vec![0.0]), 1, 0).unwrap();
        let g = grasp_far_point(&mut env, 1);
        let tangent = joint_tangent(&obj, env.state(), &g).unwrap().direction;
        env.step(Action::Move { direction: tangent }).unwrap();
        let gripper = env.observation().gripper.unwrap();
        let idx = env.initial_observation().nearest(&g.position).unwrap().0;
        assert!((gripper.position - env.observation().points[idx].position).norm() < 1e-12);
        assert!((gripper.position.norm() - g.position.norm()).abs() < 1e-12);
    }

    fn door_point(env: &Env, link: usize) -> SurfacePoint {
        *env.observation()
            .points
            .iter()
            .filter(|p| p.link == link)
            .max_by(|a, b| a.position.x.total_cmp(&b.position.x))
            .unwrap()
    }

    #[test]
    fn position_labels_look_ahead() {
        let obj = door();
        let mut env = Env::new(obj.clone(), JointState::new(vec![0.0]), 1, 0).unwrap();
        let g = door_point(&env, 1);
        let mut ep = vec![env
            .step(Action::Grasp {
                position: g.position,
            })
            .unwrap()];
        let tangent = joint_tangent(&obj, env.state(), &g).unwrap().direction;
        ep.push(
            env.step(Action::Move {
                direction: Vec3::z(),
            })
            .unwrap(),
        );
        ep.push(env.step(Action::Move { direction: tangent }).unwrap());
        label_positions(&mut ep);
        assert_eq!(ep[0].position_label, Some(true));
        assert_eq!(ep[1].position_label, None);

        let mut env = Env::new(obj, JointState::new(vec![0.0]), 1, 1).unwrap();
        let g = door_point(&env, 0);
        let mut ep = vec![env
            .step(Action::Grasp {
                position: g.position,
            })
            .unwrap()];
        ep.push(
            env.step(Action::Move {
                direction: Vec3::y(),
            })
            .unwrap(),
        );
        label_positions(&mut ep);
        assert_eq!(ep[0].position_label, Some(false));
    }
}
