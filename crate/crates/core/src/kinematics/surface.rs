//! Point-sampled surface observations.

use nalgebra::Point3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{forward_kinematics, ArticulatedObject, JointState, Vec3};
use crate::{rng, Error, Result};

/// Per-point feature layout: position (3), normal (3), crease proximity,
/// height above the ground plane.
pub const FEATURE_DIM: usize = 8;

/// Width of the band next to a face boundary over which the crease feature
/// ramps from 1 to 0, meters.
const CREASE_BAND: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub normal: Vec3,
    /// Owning link. Visible to oracles and labeling, never to learned scorers.
    pub link: usize,
}

impl SurfacePoint {
    pub fn features(&self, crease: f64) -> [f64; FEATURE_DIM] {
        let p = self.position;
        let n = self.normal;
        [p.x, p.y, p.z, n.x, n.y, n.z, crease, p.z]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub points: Vec<SurfacePoint>,
    pub features: Vec<[f64; FEATURE_DIM]>,
    /// End-effector contact point, when the gripper is attached.
    #[serde(default)]
    pub gripper: Option<SurfacePoint>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_gripper(mut self, gripper: Option<SurfacePoint>) -> Self {
        self.gripper = gripper;
        self
    }

    /// Index of the sampled point nearest to `p`, with its distance.
    pub fn nearest(&self, p: &Vec3) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s.position - p).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, d2)| (i, d2.sqrt()))
    }

    /// SHA-256 over the exact bit patterns of every stored value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let put_point = |h: &mut Sha256, p: &SurfacePoint| {
            for v in p.position.iter().chain(p.normal.iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update((p.link as u64).to_le_bytes());
        };
        h.update((self.points.len() as u64).to_le_bytes());
        for (p, f) in self.points.iter().zip(&self.features) {
            put_point(&mut h, p);
            for v in f {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        match &self.gripper {
            Some(g) => {
                h.update([1u8]);
                put_point(&mut h, g);
            }
            None => h.update([0u8]),
        }
        hex::encode(h.finalize())
    }
}

struct Face {
    link: usize,
    center: Vec3,
    u: Vec3,
    v: Vec3,
    half_u: f64,
    half_v: f64,
    normal: Vec3,
}

fn faces(object: &ArticulatedObject) -> Vec<Face> {
    let mut out = Vec::new();
    for (li, link) in object.links.iter().enumerate() {
        for b in &link.boxes {
            let axes = [
                b.rotation * Vec3::x(),
                b.rotation * Vec3::y(),
                b.rotation * Vec3::z(),
            ];
            let h = b.half_extents;
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                for sign in [1.0, -1.0] {
                    out.push(Face {
                        link: li,
                        center: b.center + axes[k] * (sign * h[k]),
                        u: axes[i],
                        v: axes[j],
                        half_u: h[i],
                        half_v: h[j],
                        normal: axes[k] * sign,
                    });
                }
            }
        }
    }
    out
}

/// Draws `n` points area-weighted over every link surface at the posed
/// configuration. Identical `(object, state, seed)` give bit-identical output,
/// and the same seed at different states gives corresponding points (same face
/// and same face coordinates).
pub fn sample_surface(
    object: &ArticulatedObject,
    state: &JointState,
    n: usize,
    seed: u64,
) -> Result<Observation> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    object.check_geometry()?;
    let poses = forward_kinematics(object, state)?;
    let faces = faces(object);
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in &faces {
        total += 4.0 * f.half_u * f.half_v;
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Geometry(format!(
            "object {} has zero surface area",
            object.id
        )));
    }

    let mut rng = rng::from_seed(seed);
    let mut points = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.random::<f64>() * total;
        let fi = cumulative
            .partition_point(|&c| c <= pick)
            .min(faces.len() - 1);
        let s: f64 = rng.random_range(-1.0..1.0);
        let t: f64 = rng.random_range(-1.0..1.0);
        let f = &faces[fi];
        let local = f.center + f.u * (s * f.half_u) + f.v * (t * f.half_v);
        let edge = (f.half_u * (1.0 - s.abs())).min(f.half_v * (1.0 - t.abs()));
        let crease = (1.0 - edge / CREASE_BAND).max(0.0);
        let pose = &poses[f.link];
        let point = SurfacePoint {
            position: (pose * Point3::from(local)).coords,
            normal: pose.rotation * f.normal,
            link: f.link,
        };
        features.push(point.features(crease));
        points.push(point);
    }
    Ok(Observation {
        points,
        features,
        gripper: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{BoxShape, Joint, LinkDef};

    fn cube() -> ArticulatedObject {
        ArticulatedObject::new(
            "cube",
            vec![LinkDef {
                name: "base".into(),
                parent: None,
                boxes: vec![BoxShape::from_bounds([0.0; 3], [1.0; 3])],
                joint: None,
            }],
        )
        .unwrap()
    }

    fn door() -> ArticulatedObject {
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
        .unwrap()
    }

    #[test]
    fn cube_faces_share_area_evenly() {
        let obs = sample_surface(&cube(), &JointState::new(vec![]), 512, 11).unwrap();
        let mut counts = std::collections::HashMap::new();
        for p in &obs.points {
            let key = (
                p.normal.x.round() as i32,
                p.normal.y.round() as i32,
                p.normal.z.round() as i32,
            );
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = 512.0 / 6.0;
        for (face, c) in counts {
            let share = c as f64 / expected;
            assert!((0.8..=1.2).contains(&share), "face {face:?} count {c}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = JointState::new(vec![0.4]);
        let a = sample_surface(&door(), &s, 256, 3).unwrap();
        let b = sample_surface(&door(), &s, 256, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = sample_surface(&door(), &s, 256, 4).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn only_moving_link_points_change() {
        let a = sample_surface(&door(), &JointState::new(vec![0.0]), 512, 9).unwrap();
        let b = sample_surface(&door(), &JointState::new(vec![1.0]), 512, 9).unwrap();
        let mut moved = 0;
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.link, q.link);
            if p.link == 0 {
                assert_eq!(p.position, q.position);
            } else if (p.position - q.position).norm() > 1e-9 {
                moved += 1;
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn points_lie_on_posed_boxes() {
        let obj = door();
        let state = JointState::new(vec![0.9]);
        let obs = sample_surface(&obj, &state, 512, 5).unwrap();
        let poses = forward_kinematics(&obj, &state).unwrap();
        for p in &obs.points {
            let b = &obj.links[p.link].boxes[0];
            let local = poses[p.link].inverse() * Point3::from(p.position);
            let d = (local.coords - b.center).abs() - b.half_extents;
            // on the boundary: inside every slab and touching at least one face
            assert!(d.max() < 1e-9 && d.max() > -1e-9, "{d:?}");
            assert!((p.normal.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_area_geometry_is_rejected() {
        let flat = ArticulatedObject::new(
            "flat",
            vec![LinkDef {
                name: "base".into(),
                parent: None,
                boxes: vec![BoxShape::from_bounds([0.0; 3], [1.0, 1.0, 0.0])],
                joint: None,
            }],
        )
        .unwrap();
        assert!(matches!(
            sample_surface(&flat, &JointState::new(vec![]), 8, 0),
            Err(Error::Geometry(_))
        ));
        assert!(sample_surface(&cube(), &JointState::new(vec![]), 0, 0).is_err());
    }
}
