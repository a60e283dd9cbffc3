//! Grasp-position and direction scorers.
//!
//! Two interchangeable scorers share one interface: a small trainable model
//! that sees only observations, and a kinematic oracle that reads the true
//! object, state and grasp to produce exact outcomes.

mod mlp;
mod model;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use mlp::{Layer, Mlp, Trace};
pub use model::{
    bce, combined_direction_loss, embed, joint_embedding, sigmoid, softmax3, DirectionExample,
    DirectionLoss, Head, LossConfig, ModelConfig, Optimizer, PolicyModel, PositionExample,
    AOT_INPUT, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, DIST_INPUT, EMBED_DIM, POSITION_INPUT,
};

use crate::interaction::compute_outcome;
use crate::kinematics::{
    apply_displacement, joint_tangent, ArticulatedObject, JointState, Observation, SurfacePoint,
    Vec3,
};
use crate::sampler::Prediction;
use crate::{Error, Result, STEP_LENGTH};

/// Everything a position scorer may look at. The oracle reads `object` and
/// `state`; the learned model reads only `obs`.
#[derive(Clone, Copy, Debug)]
pub struct PositionQuery<'a> {
    pub obs: &'a Observation,
    pub object: &'a ArticulatedObject,
    pub state: &'a JointState,
}

/// Everything a direction scorer may look at. `obs_ref` and `ref_state` are
/// the initial observation and state during exploration, the goal during
/// goal-conditioned episodes.
#[derive(Clone, Copy, Debug)]
pub struct DirectionQuery<'a> {
    pub obs_curr: &'a Observation,
    pub obs_ref: &'a Observation,
    pub object: &'a ArticulatedObject,
    pub state: &'a JointState,
    pub ref_state: &'a JointState,
    pub grasp: Option<SurfacePoint>,
}

#[derive(Clone, Debug)]
pub enum Scorer {
    Oracle,
    Learned(Arc<PolicyModel>),
}

impl Scorer {
    pub fn score_positions(&self, q: &PositionQuery) -> Result<Vec<f64>> {
        if q.obs.is_empty() {
            return Err(Error::Environment("empty observation".into()));
        }
        match self {
            Scorer::Learned(m) => Ok(m.score_positions(q.obs)),
            Scorer::Oracle => q
                .obs
                .points
                .iter()
                .map(|p| match joint_tangent(q.object, q.state, p) {
                    Ok(_) => Ok(1.0),
                    Err(Error::Immovable(_)) | Err(Error::NearAxis { .. }) => Ok(0.0),
                    Err(e) => Err(e),
                })
                .collect(),
        }
    }

    pub fn score_directions(
        &self,
        q: &DirectionQuery,
        directions: &[Vec3],
    ) -> Result<Vec<Prediction>> {
        match self {
            Scorer::Learned(m) => Ok(m.predict_directions(q.obs_curr, q.obs_ref, directions)),
            Scorer::Oracle => directions.iter().map(|d| oracle_direction(q, d)).collect(),
        }
    }
}

/// Exact outcome of one step along `direction` from the true state.
pub fn oracle_direction(q: &DirectionQuery, direction: &Vec3) -> Result<Prediction> {
    let deltas = q.object.deltas();
    let next = match &q.grasp {
        Some(g) => apply_displacement(q.object, q.state, g, direction, STEP_LENGTH)?.0,
        None => q.state.clone(),
    };
    let o = compute_outcome(&deltas, q.ref_state, q.state, &next)?;
    Ok(Prediction::one_hot(o.r_dist, o.r_aot))
}

/// Scores one direction. Rejects non-unit input.
pub fn score_direction(
    scorer: &Scorer,
    q: &DirectionQuery,
    direction: &Vec3,
) -> Result<Prediction> {
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("direction must be unit length"));
    }
    Ok(scorer.score_directions(q, std::slice::from_ref(direction))?[0])
}

/// Linear decay from 1 to `eps_min` over `n_epochs`, flat afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub eps_min: f64,
    pub n_epochs: usize,
}

impl EpsilonSchedule {
    pub const POSITION: Self = Self {
        eps_min: 0.1,
        n_epochs: 300,
    };
    pub const DIRECTION: Self = Self {
        eps_min: 0.2,
        n_epochs: 500,
    };

    pub fn value(&self, epoch: usize) -> f64 {
        if self.n_epochs == 0 {
            return self.eps_min;
        }
        let decayed = 1.0 - epoch as f64 * (1.0 - self.eps_min) / self.n_epochs as f64;
        decayed.max(self.eps_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::interaction::Aot;
    use crate::kinematics::sample_surface;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn oracle_positions() {
        let block = fixtures::base_only();
        let s = JointState::new(vec![]);
        let obs = sample_surface(&block, &s, 64, 0).unwrap();
        let q = PositionQuery {
            obs: &obs,
            object: &block,
            state: &s,
        };
        assert!(Scorer::Oracle
            .score_positions(&q)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let door = fixtures::door();
        let s = JointState::new(vec![0.3]);
        let obs = sample_surface(&door, &s, 512, 0).unwrap();
        let q = PositionQuery {
            obs: &obs,
            object: &door,
            state: &s,
        };
        let scores = Scorer::Oracle.score_positions(&q).unwrap();
        let (mut hinge, mut handle) = (0, 0);
        for (p, v) in obs.points.iter().zip(&scores) {
            let r = p.position.xy().norm();
            if p.link == 0 {
                assert_eq!(*v, 0.0);
            } else if r < 0.045 {
                assert_eq!(*v, 0.0);
                hinge += 1;
            } else if r > 0.06 {
                assert_eq!(*v, 1.0);
                handle += 1;
            }
        }
        assert!(hinge > 0 && handle > 0);
    }

    fn drawer_query<'a>(
        obj: &'a ArticulatedObject,
        obs: &'a Observation,
        state: &'a JointState,
        grasp: SurfacePoint,
    ) -> DirectionQuery<'a> {
        DirectionQuery {
            obs_curr: obs,
            obs_ref: obs,
            object: obj,
            state,
            ref_state: state,
            grasp: Some(grasp),
        }
    }

    #[test]
    fn oracle_direction_examples() {
        let obj = fixtures::drawer();
        let s = JointState::new(vec![0.1]);
        let obs = sample_surface(&obj, &s, 64, 0).unwrap();
        let g = *obs.points.iter().find(|p| p.link == 1).unwrap();
        let q = drawer_query(&obj, &obs, &s, g);
        let p = score_direction(&Scorer::Oracle, &q, &Vec3::x()).unwrap();
        assert!((p.dist - 0.18).abs() < 1e-12);
        assert_eq!(p.class(), Aot::Forward);
        let o = compute_outcome(&[0.15], &s, &s, &JointState::new(vec![0.1 + 0.18])).unwrap();
        assert_eq!(p, Prediction::one_hot(o.r_dist, o.r_aot));
        let p = score_direction(&Scorer::Oracle, &q, &Vec3::y()).unwrap();
        assert_eq!(p.dist, 0.0);
        assert_eq!(p.class(), Aot::Still);
        assert!(score_direction(&Scorer::Oracle, &q, &Vec3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn oracle_matches_environment() {
        use crate::interaction::{Action, Env};
        let obj = fixtures::door();
        for seed in 0..20u64 {
            let mut rng = rng::from_seed(seed);
            let mut env = Env::new(
                obj.clone(),
                JointState::new(vec![rng.random_range(0.0..1.5)]),
                seed,
                0,
            )
            .unwrap();
            let g = *env
                .observation()
                .points
                .iter()
                .filter(|p| p.link == 1)
                .nth(seed as usize)
                .unwrap();
            env.step(Action::Grasp {
                position: g.position,
            })
            .unwrap();
            for _ in 0..4 {
                let dir = crate::sampler::uniform_directions(1, rng.random()).directions[0];
                let q = DirectionQuery {
                    obs_curr: env.observation(),
                    obs_ref: env.initial_observation(),
                    object: &obj,
                    state: env.state(),
                    ref_state: env.init_state(),
                    grasp: env.grasp_point(),
                };
                let p = oracle_direction(&q, &dir).unwrap();
                let t = env.step(Action::Move { direction: dir }).unwrap();
                assert_eq!(p, Prediction::one_hot(t.outcome.r_dist, t.outcome.r_aot));
            }
        }
    }

    fn probe_batches(seed: u64) -> (Vec<PositionExample>, Vec<DirectionExample>) {
        let mut rng = rng::from_seed(seed);
        let mut r = |n: usize| {
            (0..n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let pos = (0..16)
            .map(|i| PositionExample {
                input: r(POSITION_INPUT),
                label: i % 2 == 0,
            })
            .collect();
        let dir = (0..24)
            .map(|i| {
                let d = r(3);
                DirectionExample {
                    embed_curr: r(EMBED_DIM),
                    embed_ref: r(EMBED_DIM),
                    direction: Vec3::new(d[0], d[1], d[2]).normalize(),
                    r_dist: d[0].abs() * 0.3,
                    class: Aot::from_class_index(i % 3),
                }
            })
            .collect();
        (pos, dir)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [1, 2, 3] {
            let model = PolicyModel::new(ModelConfig::default(), seed);
            let (p, d) = probe_batches(seed);
            let err = model.grad_check(&p, &d);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_network_has_symmetric_gradients() {
        let mut model = PolicyModel::new(ModelConfig::default(), 0);
        model.position.net.scale(0.0);
        let (p, _) = probe_batches(0);
        // mirrored labels on identical inputs cancel exactly
        let batch = vec![
            PositionExample {
                input: p[0].input.clone(),
                label: true,
            },
            PositionExample {
                input: p[0].input.clone(),
                label: false,
            },
        ];
        let before = model.clone();
        model.train_position_step(&batch);
        assert_eq!(model.position.net, before.position.net);
    }

    #[test]
    fn loss_examples() {
        let confident: f64 = [bce(0.999, true), bce(0.001, false)].iter().sum::<f64>() / 2.0;
        assert!(confident < 0.01);
        assert!((bce(0.5, true) - 2f64.ln()).abs() < 1e-6);
        let l = combined_direction_loss(
            100.0,
            &[0.3, 0.1],
            &[0.3, 0.1],
            &[[0.0, 0.0, 1.0]; 2],
            &[Aot::Forward; 2],
        );
        assert!(l.combined < 1e-4);
        let l = combined_direction_loss(
            100.0,
            &[0.4, 0.2],
            &[0.3, 0.1],
            &[[1.0, 0.0, 0.0]; 2],
            &[Aot::Backward; 2],
        );
        assert!((l.combined - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overfit_fixed_batches() {
        // plain gradient descent with a small step never increases the loss
        let mut cfg = ModelConfig::default();
        cfg.loss.optimizer = Optimizer::Sgd;
        let mut model = PolicyModel::new(cfg, 5);
        let (p, d) = probe_batches(5);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let l = model.train_position_step(&p);
            assert!(l <= last + 1e-12);
            last = l;
        }
        let first = model.train_direction_step(&d);
        let (mut ld, mut la) = (first.dist, first.aot);
        for _ in 0..200 {
            let l = model.train_direction_step(&d);
            assert!(l.dist <= ld + 1e-12 && l.aot <= la + 1e-12);
            ld = l.dist;
            la = l.aot;
        }
        assert!(ld < first.dist && la < first.aot);
    }

    #[test]
    fn adam_learns_faster_than_sgd_on_fixed_batch() {
        let (p, _) = probe_batches(8);
        let mut cfg = ModelConfig::default();
        cfg.loss.optimizer = Optimizer::Sgd;
        let mut sgd = PolicyModel::new(cfg, 8);
        cfg.loss.optimizer = Optimizer::Adam;
        let mut adam = PolicyModel::new(cfg, 8);
        for _ in 0..50 {
            sgd.train_position_step(&p);
            adam.train_position_step(&p);
        }
        assert!(adam.position_loss(&p) < sgd.position_loss(&p));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut model = PolicyModel::new(ModelConfig::default(), 11);
        let (p, d) = probe_batches(11);
        model.train_position_step(&p);
        model.train_direction_step(&d);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = PolicyModel::load(&path).unwrap();
        assert_eq!(back, model);
        assert!(back.params_bits_eq(&model));
        assert!(PolicyModel::from_json("{\"format\":\"x\",\"version\":1}").is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = EpsilonSchedule::POSITION;
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(300), 0.1);
        assert_eq!(s.value(5000), 0.1);
        assert!((s.value(150) - 0.55).abs() < 1e-12);
        assert_eq!(EpsilonSchedule::DIRECTION.value(500), 0.2);
    }

    proptest! {
        #[test]
        fn schedule_shape(n in 1usize..1000, eps_min in 0.0f64..1.0) {
            let s = EpsilonSchedule { eps_min, n_epochs: n };
            prop_assert_eq!(s.value(0), 1.0);
            let mut prev = 1.0;
            for e in 0..=10 * n {
                let v = s.value(e);
                prop_assert!(v <= prev && v >= eps_min);
                if e >= n {
                    prop_assert!((v - eps_min).abs() < 1e-12);
                }
                prev = v;
            }
        }

        #[test]
        fn aot_head_is_a_distribution(seed in 0u64..50, x in prop::collection::vec(-5.0f64..5.0, 3)) {
            let model = PolicyModel::new(ModelConfig { init_scale: 1.0, ..ModelConfig::default() }, seed);
            let obs = Observation {
                points: vec![],
                features: vec![[x[0], x[1], x[2], 0.0, 0.0, 1.0, 0.0, x[2]]],
                gripper: None,
            };
            let d = Vec3::new(x[0], x[1], x[2] + 0.1).normalize();
            for p in model.predict_directions(&obs, &obs, &[d]) {
                prop_assert!(p.aot.iter().all(|&v| v >= 0.0));
                prop_assert!((p.aot.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for s in model.score_positions(&obs) {
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
