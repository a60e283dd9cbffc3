//! Kinematic simulator and policy harness for articulated-object manipulation.
//!
//! The crate is organised bottom-up:
//!
//! - [`kinematics`]: object model, forward kinematics, surface sampling and the
//!   quasi-static motion model.
//! - [`interaction`]: environments, per-step outcome labels (distance, history
//!   dot product and Arrow-of-Time class) and the FIFO replay buffer.
//! - [`sampler`]: uniform and cross-entropy direction sampling plus selection.
//! - [`policy`]: position and direction scorers, both a small trainable
//!   approximator and an exact kinematic oracle.
//! - [`tasks`]: exploration and goal-conditioned episodes, the training loop and
//!   evaluation metrics.
//! - [`structure`]: joint-parameter inference from executed action traces.
//! - [`harness`]: procedural object suites, experiment configs and reports.

pub mod error;
#[cfg(test)]
mod fixtures;
pub mod harness;
pub mod interaction;
pub mod kinematics;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod structure;
pub mod tasks;

pub use error::{Error, Result};

pub use interaction::{Action, Aot, Env, InteractionOutcome, ReplayBuffer, Transition};
pub use kinematics::{
    ArticulatedObject, Joint, JointKind, JointState, Observation, SurfacePoint, Vec3,
};
pub use policy::{PolicyModel, Scorer};
pub use sampler::{CandidateSet, CemConfig, SelectionMode};
pub use tasks::{BaselineKind, EpisodeResult, ExploreMode, GoalTask, Policy, Termination};

/// End-effector travel per directional step, meters.
pub const STEP_LENGTH: f64 = 0.18;
