//! Small hand-built objects shared by unit tests.

use std::sync::Arc;

use crate::kinematics::{ArticulatedObject, BoxShape, Joint, LinkDef, Vec3};

fn base(lo: [f64; 3], hi: [f64; 3]) -> LinkDef {
    LinkDef {
        name: "base".into(),
        parent: None,
        boxes: vec![BoxShape::from_bounds(lo, hi)],
        joint: None,
    }
}

/// 0.8 m door hinged on the z axis through the origin, opening 0 to 1.5 rad.
pub fn door() -> Arc<ArticulatedObject> {
    Arc::new(
        ArticulatedObject::new(
            "door",
            vec![
                base([0.0, -0.4, 0.0], [0.8, 0.0, 1.0]),
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

/// Drawer sliding along +x between 0 and 0.5 m.
pub fn drawer() -> Arc<ArticulatedObject> {
    Arc::new(
        ArticulatedObject::new(
            "drawer",
            vec![
                base([-0.5, -0.3, 0.0], [0.0, 0.3, 0.6]),
                LinkDef {
                    name: "drawer".into(),
                    parent: Some("base".into()),
                    boxes: vec![BoxShape::from_bounds([0.0, -0.25, 0.2], [0.05, 0.25, 0.4])],
                    joint: Some(Joint::prismatic(Vec3::x(), [0.0, 0.5]).unwrap()),
                },
            ],
        )
        .unwrap(),
    )
}

pub fn base_only() -> Arc<ArticulatedObject> {
    Arc::new(ArticulatedObject::new("block", vec![base([0.0; 3], [0.5; 3])]).unwrap())
}

/// Two doors side by side, hinged at x = 0 and x = 1.2.
pub fn double_door() -> Arc<ArticulatedObject> {
    let leaf = |name: &str, lo: [f64; 3], hi: [f64; 3], joint: Joint| LinkDef {
        name: name.into(),
        parent: Some("base".into()),
        boxes: vec![BoxShape::from_bounds(lo, hi)],
        joint: Some(joint),
    };
    Arc::new(
        ArticulatedObject::new(
            "double_door",
            vec![
                base([0.0, -0.4, 0.0], [1.2, 0.0, 1.0]),
                leaf(
                    "left",
                    [0.01, 0.0, 0.0],
                    [0.59, 0.03, 1.0],
                    Joint::revolute(Vec3::z(), Vec3::zeros(), [0.0, 1.5]).unwrap(),
                ),
                leaf(
                    "right",
                    [0.61, 0.0, 0.0],
                    [1.19, 0.03, 1.0],
                    Joint::revolute(-Vec3::z(), Vec3::new(1.2, 0.0, 0.0), [0.0, 1.5]).unwrap(),
                ),
            ],
        )
        .unwrap(),
    )
}

/// Door with an unrealistically wide range so episodes never touch a limit.
pub fn free_door() -> Arc<ArticulatedObject> {
    Arc::new(
        ArticulatedObject::new(
            "free_door",
            vec![
                base([0.0, -0.4, 0.0], [0.8, 0.0, 1.0]),
                LinkDef {
                    name: "door".into(),
                    parent: Some("base".into()),
                    boxes: vec![BoxShape::from_bounds([0.01, 0.0, 0.0], [0.8, 0.03, 1.0])],
                    joint: Some(Joint::revolute(Vec3::z(), Vec3::zeros(), [-40.0, 40.0]).unwrap()),
                },
            ],
        )
        .unwrap(),
    )
}
