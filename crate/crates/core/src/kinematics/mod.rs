//! Articulated objects, joint state, surface observations and the quasi-static
//! motion model.

mod motion;
mod object;
mod surface;

use serde::{Deserialize, Serialize};

pub use motion::{apply_displacement, forward_kinematics, joint_tangent, Tangent};
pub use object::{
    ArticulatedObject, BoxShape, BoxSpec, Joint, JointKind, JointMotion, JointSpec, Link, LinkDef,
    LinkSpec, ObjectSpec, Polyline, DEFAULT_SAMPLE_COUNT, MIN_LEVER_RADIUS, PRISMATIC_DELTA,
    REVOLUTE_DELTA,
};
pub use surface::{sample_surface, Observation, SurfacePoint, FEATURE_DIM};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Pose = nalgebra::Isometry3<f64>;

/// One coordinate per movable joint, radians or meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointState(pub Vec<f64>);

impl JointState {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for JointState {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for JointState {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
