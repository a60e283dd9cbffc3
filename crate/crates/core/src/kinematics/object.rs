//! Object model and the JSON object spec format.

use std::path::Path;

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::{Error, Result};

/// Significance threshold for prismatic and path joints, meters.
pub const PRISMATIC_DELTA: f64 = 0.15;
/// Significance threshold for revolute joints: 8.6 degrees, in radians.
pub const REVOLUTE_DELTA: f64 = 8.6 * std::f64::consts::PI / 180.0;
/// Grasps closer than this to a revolute axis cannot move the link.
pub const MIN_LEVER_RADIUS: f64 = 0.05;
pub const DEFAULT_SAMPLE_COUNT: usize = 512;

const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Path,
}

impl JointKind {
    pub fn default_delta(self) -> f64 {
        match self {
            JointKind::Revolute => REVOLUTE_DELTA,
            JointKind::Prismatic | JointKind::Path => PRISMATIC_DELTA,
        }
    }
}

/// Polyline track parameterised by arc length from its first vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    vertices: Vec<Vec3>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::ObjectSpec("path needs at least two vertices".into()));
        }
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            let len = (w[1] - w[0]).norm();
            if len <= 1e-9 {
                return Err(Error::ObjectSpec("path has a zero-length segment".into()));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Ok(Self {
            vertices,
            cumulative,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Index of the segment that carries motion at arc length `s`: the segment
    /// starting at or before `s`, so a vertex belongs to the segment ahead of it.
    pub fn segment_at(&self, s: f64) -> usize {
        let last = self.vertices.len() - 2;
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(last)
    }

    pub fn tangent_at(&self, s: f64) -> Vec3 {
        let i = self.segment_at(s);
        (self.vertices[i + 1] - self.vertices[i]).normalize()
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        let i = self.segment_at(s);
        let t = s - self.cumulative[i];
        self.vertices[i] + self.tangent_at(s) * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum JointMotion {
    Revolute { axis: Unit<Vec3>, point: Vec3 },
    Prismatic { axis: Unit<Vec3> },
    Path { track: Polyline },
}

/// A 1-DoF joint. Geometry is expressed in the parent frame at rest, which for
/// links attached to the base coincides with the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub motion: JointMotion,
    pub limits: [f64; 2],
    pub delta: f64,
}

impl Joint {
    pub fn revolute(axis: Vec3, point: Vec3, limits: [f64; 2]) -> Result<Self> {
        let axis = unit(axis, "revolute axis")?;
        Self::with_motion(JointMotion::Revolute { axis, point }, limits, None)
    }

    pub fn prismatic(axis: Vec3, limits: [f64; 2]) -> Result<Self> {
        let axis = unit(axis, "prismatic axis")?;
        Self::with_motion(JointMotion::Prismatic { axis }, limits, None)
    }

    pub fn path(vertices: Vec<Vec3>, limits: [f64; 2]) -> Result<Self> {
        let track = Polyline::new(vertices)?;
        if limits[0] < 0.0 || limits[1] > track.length() + 1e-12 {
            return Err(Error::ObjectSpec(format!(
                "path limits {limits:?} exceed track length {}",
                track.length()
            )));
        }
        Self::with_motion(JointMotion::Path { track }, limits, None)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::ObjectSpec(format!(
                "delta must be positive, got {delta}"
            )));
        }
        self.delta = delta;
        Ok(self)
    }

    fn with_motion(motion: JointMotion, limits: [f64; 2], delta: Option<f64>) -> Result<Self> {
        if !(limits[0] < limits[1]) || !limits.iter().all(|l| l.is_finite()) {
            return Err(Error::ObjectSpec(format!(
                "limits {limits:?} must satisfy lo < hi"
            )));
        }
        let kind = match &motion {
            JointMotion::Revolute { .. } => JointKind::Revolute,
            JointMotion::Prismatic { .. } => JointKind::Prismatic,
            JointMotion::Path { .. } => JointKind::Path,
        };
        let joint = Self {
            motion,
            limits,
            delta: kind.default_delta(),
        };
        match delta {
            Some(d) => joint.with_delta(d),
            None => Ok(joint),
        }
    }

    pub fn kind(&self) -> JointKind {
        match self.motion {
            JointMotion::Revolute { .. } => JointKind::Revolute,
            JointMotion::Prismatic { .. } => JointKind::Prismatic,
            JointMotion::Path { .. } => JointKind::Path,
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limits[0], self.limits[1])
    }

    pub fn range(&self) -> f64 {
        self.limits[1] - self.limits[0]
    }
}

fn unit(v: Vec3, what: &str) -> Result<Unit<Vec3>> {
    let n = v.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::ObjectSpec(format!("{what} must be non-zero")));
    }
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::ObjectSpec(format!(
            "{what} must be unit length, norm {n}"
        )));
    }
    Ok(Unit::new_normalize(v))
}

/// Oriented box in the link's rest frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxShape {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub rotation: Rotation3<f64>,
}

impl BoxShape {
    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            center,
            half_extents,
            rotation: Rotation3::identity(),
        }
    }

    /// Box spanning `[lo, hi]` along each world axis.
    pub fn from_bounds(lo: [f64; 3], hi: [f64; 3]) -> Self {
        let lo = Vec3::from(lo);
        let hi = Vec3::from(hi);
        Self::axis_aligned((lo + hi) / 2.0, (hi - lo) / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub boxes: Vec<BoxShape>,
    pub joint: Option<Joint>,
    /// Index of this link's coordinate in a [`super::JointState`].
    pub joint_index: Option<usize>,
}

impl Link {
    pub fn is_movable(&self) -> bool {
        self.joint.is_some()
    }
}

/// Immutable articulated object: a tree of links rooted at the base (link 0).
#[derive(Clone, Debug, PartialEq)]
pub struct ArticulatedObject {
    pub id: String,
    pub category: Option<String>,
    pub links: Vec<Link>,
    /// Link index owning each joint coordinate.
    pub joint_links: Vec<usize>,
    pub surface_sample_count: usize,
    pub step_budget: Option<usize>,
}

/// Link description used by [`ArticulatedObject::new`].
#[derive(Clone, Debug)]
pub struct LinkDef {
    pub name: String,
    pub parent: Option<String>,
    pub boxes: Vec<BoxShape>,
    pub joint: Option<Joint>,
}

impl ArticulatedObject {
    /// Validates structure: base first, tree with depth at most 2, exactly one
    /// joint per non-base link, parents declared before children.
    pub fn new(id: impl Into<String>, defs: Vec<LinkDef>) -> Result<Self> {
        let id = id.into();
        if defs.is_empty() {
            return Err(Error::ObjectSpec("object has no links".into()));
        }
        let mut links: Vec<Link> = Vec::with_capacity(defs.len());
        let mut joint_links = Vec::new();
        for (i, def) in defs.into_iter().enumerate() {
            if links.iter().any(|l| l.name == def.name) {
                return Err(Error::ObjectSpec(format!(
                    "duplicate link name {:?}",
                    def.name
                )));
            }
            let parent = match (&def.parent, i) {
                (None, 0) => None,
                (Some(_), 0) => {
                    return Err(Error::ObjectSpec("first link must be the base".into()))
                }
                (None, _) => {
                    return Err(Error::ObjectSpec(format!(
                        "link {:?} has no parent",
                        def.name
                    )))
                }
                (Some(p), _) => Some(
                    links
                        .iter()
                        .position(|l| &l.name == p)
                        .ok_or_else(|| Error::ObjectSpec(format!("unknown parent {p:?}")))?,
                ),
            };
            if i == 0 && def.joint.is_some() {
                return Err(Error::ObjectSpec("base link cannot carry a joint".into()));
            }
            if i > 0 && def.joint.is_none() {
                return Err(Error::ObjectSpec(format!(
                    "link {:?} has no joint",
                    def.name
                )));
            }
            if let Some(p) = parent {
                if links[p].parent.and_then(|gp| links[gp].parent).is_some() {
                    return Err(Error::ObjectSpec("link tree deeper than 2".into()));
                }
            }
            let joint_index = def.joint.as_ref().map(|_| {
                joint_links.push(i);
                joint_links.len() - 1
            });
            links.push(Link {
                name: def.name,
                parent,
                boxes: def.boxes,
                joint: def.joint,
                joint_index,
            });
        }
        Ok(Self {
            id,
            category: None,
            links,
            joint_links,
            surface_sample_count: DEFAULT_SAMPLE_COUNT,
            step_budget: None,
        })
    }

    pub fn dof(&self) -> usize {
        self.joint_links.len()
    }

    pub fn joint(&self, index: usize) -> &Joint {
        self.links[self.joint_links[index]].joint.as_ref().unwrap()
    }

    pub fn joints(&self) -> impl Iterator<Item = &Joint> + '_ {
        (0..self.dof()).map(move |i| self.joint(i))
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.joints().map(|j| j.delta).collect()
    }

    pub fn lower_state(&self) -> super::JointState {
        super::JointState::new(self.joints().map(|j| j.limits[0]).collect())
    }

    pub fn upper_state(&self) -> super::JointState {
        super::JointState::new(self.joints().map(|j| j.limits[1]).collect())
    }

    pub fn link_by_name(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Fails on boxes with a non-positive half extent, which produce faces of
    /// zero area.
    pub fn check_geometry(&self) -> Result<()> {
        if self.links.iter().all(|l| l.boxes.is_empty()) {
            return Err(Error::Geometry(format!(
                "object {} has no surface",
                self.id
            )));
        }
        for link in &self.links {
            for b in &link.boxes {
                if b.half_extents.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
                    return Err(Error::Geometry(format!(
                        "link {:?} has a box with half extents {:?}",
                        link.name,
                        b.half_extents.as_slice()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ObjectSpec =
            serde_json::from_str(text).map_err(|e| Error::ObjectSpec(e.to_string()))?;
        Self::from_spec(spec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_spec()).expect("spec serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_spec(spec: ObjectSpec) -> Result<Self> {
        let mut defs: Vec<LinkDef> = spec
            .links
            .into_iter()
            .map(|l| LinkDef {
                name: l.name,
                parent: l.parent,
                boxes: l.boxes.into_iter().map(BoxSpec::into_shape).collect(),
                joint: None,
            })
            .collect();
        for js in spec.joints {
            let def = defs
                .iter_mut()
                .find(|d| d.name == js.link)
                .ok_or_else(|| Error::ObjectSpec(format!("joint on unknown link {:?}", js.link)))?;
            if def.joint.is_some() {
                return Err(Error::ObjectSpec(format!(
                    "link {:?} has two joints",
                    js.link
                )));
            }
            def.joint = Some(js.into_joint()?);
        }
        let mut obj = Self::new(spec.id, defs)?;
        obj.category = spec.category;
        obj.step_budget = spec.step_budget;
        if let Some(n) = spec.surface_sample_count {
            if n == 0 {
                return Err(Error::ObjectSpec(
                    "surface_sample_count must be >= 1".into(),
                ));
            }
            obj.surface_sample_count = n;
        }
        obj.check_geometry()?;
        Ok(obj)
    }

    pub fn to_spec(&self) -> ObjectSpec {
        ObjectSpec {
            id: self.id.clone(),
            category: self.category.clone(),
            surface_sample_count: Some(self.surface_sample_count),
            step_budget: self.step_budget,
            links: self
                .links
                .iter()
                .map(|l| LinkSpec {
                    name: l.name.clone(),
                    parent: l.parent.map(|p| self.links[p].name.clone()),
                    boxes: l.boxes.iter().map(BoxSpec::from_shape).collect(),
                })
                .collect(),
            joints: self
                .links
                .iter()
                .filter_map(|l| l.joint.as_ref().map(|j| JointSpec::from_joint(&l.name, j)))
                .collect(),
        }
    }
}

/// On-disk object description. See `docs/object-spec.md`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_sample_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_budget: Option<usize>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub boxes: Vec<BoxSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Rotation vector (axis times angle, radians); omitted means axis-aligned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 3]>,
}

impl BoxSpec {
    fn into_shape(self) -> BoxShape {
        BoxShape {
            center: self.center.into(),
            half_extents: self.half_extents.into(),
            rotation: self
                .rotation
                .map(|r| Rotation3::new(Vec3::from(r)))
                .unwrap_or_else(Rotation3::identity),
        }
    }

    fn from_shape(b: &BoxShape) -> Self {
        let r = b.rotation.scaled_axis();
        Self {
            center: b.center.into(),
            half_extents: b.half_extents.into(),
            rotation: (r.norm() > 0.0).then(|| r.into()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub link: String,
    pub kind: JointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_direction: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<[f64; 3]>>,
    pub limits: [f64; 2],
    /// Overrides the per-kind significance threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl JointSpec {
    fn into_joint(self) -> Result<Joint> {
        let need = |v: Option<[f64; 3]>, what: &str| {
            v.map(Vec3::from)
                .ok_or_else(|| Error::ObjectSpec(format!("joint on {:?} needs {what}", self.link)))
        };
        let joint = match self.kind {
            JointKind::Revolute => Joint::revolute(
                need(self.axis_direction, "axis_direction")?,
                need(self.axis_point, "axis_point")?,
                self.limits,
            )?,
            JointKind::Prismatic => {
                Joint::prismatic(need(self.axis_direction, "axis_direction")?, self.limits)?
            }
            JointKind::Path => {
                let verts = self.path.clone().ok_or_else(|| {
                    Error::ObjectSpec(format!("joint on {:?} needs path", self.link))
                })?;
                Joint::path(verts.into_iter().map(Vec3::from).collect(), self.limits)?
            }
        };
        match self.delta {
            Some(d) => joint.with_delta(d),
            None => Ok(joint),
        }
    }

    fn from_joint(link: &str, j: &Joint) -> Self {
        let (axis_direction, axis_point, path) = match &j.motion {
            JointMotion::Revolute { axis, point } => {
                (Some(axis.into_inner().into()), Some((*point).into()), None)
            }
            JointMotion::Prismatic { axis } => (Some(axis.into_inner().into()), None, None),
            JointMotion::Path { track } => (
                None,
                None,
                Some(track.vertices().iter().map(|v| (*v).into()).collect()),
            ),
        };
        let default = j.kind().default_delta();
        Self {
            link: link.to_string(),
            kind: j.kind(),
            axis_direction,
            axis_point,
            path,
            limits: j.limits,
            delta: (j.delta != default).then_some(j.delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn door_json() -> &'static str {
        r#"{
          "id": "door",
          "links": [
            {"name": "base", "boxes": [{"center": [0.4, -0.2, 0.5], "half_extents": [0.4, 0.2, 0.5]}]},
            {"name": "panel", "parent": "base", "boxes": [{"center": [0.4, 0.015, 0.5], "half_extents": [0.39, 0.015, 0.5]}]}
          ],
          "joints": [
            {"link": "panel", "kind": "revolute", "axis_direction": [0, 0, 1], "axis_point": [0, 0, 0], "limits": [0, 1.5]}
          ]
        }"#
    }

    #[test]
    fn loads_and_round_trips() {
        let obj = ArticulatedObject::from_json(door_json()).unwrap();
        assert_eq!(obj.dof(), 1);
        assert_eq!(obj.joint(0).kind(), JointKind::Revolute);
        assert_eq!(obj.joint(0).delta, REVOLUTE_DELTA);
        let again = ArticulatedObject::from_json(&obj.to_json()).unwrap();
        assert_eq!(obj, again);
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = door_json().replacen("\"id\"", "\"colour\": 1, \"id\"", 1);
        assert!(matches!(
            ArticulatedObject::from_json(&bad),
            Err(Error::ObjectSpec(_))
        ));
    }

    #[test]
    fn rejects_inverted_limits_and_non_unit_axis() {
        assert!(Joint::revolute(Vec3::z(), Vec3::zeros(), [1.0, 0.0]).is_err());
        assert!(Joint::prismatic(Vec3::new(0.0, 0.0, 2.0), [0.0, 1.0]).is_err());
    }

    #[test]
    fn delta_defaults_follow_kind() {
        let p = Joint::prismatic(Vec3::x(), [0.0, 0.4]).unwrap();
        assert_eq!(p.delta, 0.15);
        assert!((REVOLUTE_DELTA - 0.15).abs() < 1e-3);
        assert!(p.clone().with_delta(0.0).is_err());
        assert_eq!(p.with_delta(0.2).unwrap().delta, 0.2);
    }

    #[test]
    fn rejects_deep_trees() {
        let b = || vec![BoxShape::from_bounds([0.0; 3], [0.1; 3])];
        let j = || Some(Joint::prismatic(Vec3::x(), [0.0, 0.1]).unwrap());
        let defs = vec![
            LinkDef {
                name: "base".into(),
                parent: None,
                boxes: b(),
                joint: None,
            },
            LinkDef {
                name: "a".into(),
                parent: Some("base".into()),
                boxes: b(),
                joint: j(),
            },
            LinkDef {
                name: "b".into(),
                parent: Some("a".into()),
                boxes: b(),
                joint: j(),
            },
            LinkDef {
                name: "c".into(),
                parent: Some("b".into()),
                boxes: b(),
                joint: j(),
            },
        ];
        assert!(ArticulatedObject::new("deep", defs.clone()).is_err());
        assert!(ArticulatedObject::new("ok", defs[..3].to_vec()).is_ok());
    }

    #[test]
    fn polyline_segments_and_points() {
        let p = Polyline::new(vec![
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(p.length(), 2.0);
        assert_eq!(p.segment_at(0.0), 0);
        assert_eq!(p.segment_at(1.0), 1);
        assert_eq!(p.segment_at(2.0), 1);
        assert_eq!(p.tangent_at(0.5), Vec3::y());
        assert_eq!(p.point_at(1.5), Vec3::new(0.5, 1.0, 0.0));
    }
}
