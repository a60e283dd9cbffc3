//! Environment stepping, per-step outcome labels and the replay buffer.

mod buffer;
mod env;
pub mod log;
mod outcome;

pub use buffer::{Batch, ReplayBuffer, BUFFER_CAPACITY, DIRECTION_BATCH, POSITION_BATCH};
pub use env::{label_positions, Action, Env, Transition, GRASP_RADIUS};
pub use outcome::{compute_outcome, normalized_distance, Aot, InteractionOutcome};
