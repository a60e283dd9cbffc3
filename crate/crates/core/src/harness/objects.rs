//! Procedural object generators and suite specs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Rotation3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{
    ArticulatedObject, BoxSpec, JointKind, JointSpec, LinkSpec, ObjectSpec, Vec3,
};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Door,
    #[serde(alias = "laptop")]
    Lid,
    Drawer,
    #[serde(alias = "window")]
    Slider,
    DoubleDoor,
    ToyPath,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Door,
        Category::Lid,
        Category::Drawer,
        Category::Slider,
        Category::DoubleDoor,
        Category::ToyPath,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Door => "door",
            Category::Lid => "lid",
            Category::Drawer => "drawer",
            Category::Slider => "slider",
            Category::DoubleDoor => "double_door",
            Category::ToyPath => "toy_path",
        }
    }

    /// Maximum directional steps of a goal task on this category.
    pub fn default_budget(self) -> usize {
        match self {
            Category::Door => 10,
            Category::Lid => 12,
            Category::Drawer => 9,
            Category::Slider => 6,
            Category::DoubleDoor => 12,
            Category::ToyPath => 10,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        match s.as_str() {
            "laptop" => return Ok(Category::Lid),
            "window" => return Ok(Category::Slider),
            _ => {}
        }
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown object category {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub count: usize,
    /// Overrides the category's default step budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_budget: Option<usize>,
}

/// How many objects of each category to generate, and from which seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSuiteSpec {
    pub seed: u64,
    pub categories: BTreeMap<Category, CategorySpec>,
}

impl ObjectSuiteSpec {
    pub fn new(seed: u64, counts: &[(Category, usize)]) -> Self {
        Self {
            seed,
            categories: counts
                .iter()
                .map(|&(c, count)| {
                    (
                        c,
                        CategorySpec {
                            count,
                            step_budget: None,
                        },
                    )
                })
                .collect(),
        }
    }

    /// One door, one drawer and one lid.
    pub fn starter(seed: u64) -> Self {
        Self::new(
            seed,
            &[
                (Category::Door, 1),
                (Category::Drawer, 1),
                (Category::Lid, 1),
            ],
        )
    }

    /// Two objects of every category.
    pub fn twelve(seed: u64) -> Self {
        Self::new(seed, &Category::ALL.map(|c| (c, 2)))
    }

    pub fn doors(seed: u64, count: usize) -> Self {
        Self::new(seed, &[(Category::Door, count)])
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.values().all(|c| c.count == 0) {
            return Err(Error::Config("object suite generates no objects".into()));
        }
        for (cat, c) in &self.categories {
            if c.step_budget == Some(0) {
                return Err(Error::Config(format!(
                    "{cat}: step_budget must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Generates the suite, categories in declaration order and objects numbered
/// within each category. Identical for identical specs.
pub fn generate(spec: &ObjectSuiteSpec) -> Result<Vec<Arc<ArticulatedObject>>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (&cat, c) in &spec.categories {
        for i in 0..c.count {
            let seed = rng::derive(spec.seed, &[rng::tag(cat.name()), i as u64]);
            let mut obj = generate_one(cat, &format!("{cat}_{i:02}"), seed)?;
            obj.step_budget = Some(c.step_budget.unwrap_or(cat.default_budget()));
            out.push(Arc::new(ArticulatedObject::from_spec(obj)?));
        }
    }
    Ok(out)
}

/// Writes one `<id>.json` per object and returns the paths.
pub fn gen_objects(spec: &ObjectSuiteSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for obj in generate(spec)? {
        let path = out_dir.join(format!("{}.json", obj.id));
        obj.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Loads a suite from a directory of object files (sorted by file name), a
/// single object file, or a suite spec in TOML.
/// Run manifest name; skipped when a directory is read as a suite.
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn load_suite(path: &Path) -> Result<Vec<Arc<ArticulatedObject>>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no object files in {}",
                path.display()
            )));
        }
        return files
            .iter()
            .map(|f| ArticulatedObject::load(f).map(Arc::new))
            .collect();
    }
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|x| x == "toml") {
        generate(&ObjectSuiteSpec::from_toml(&text)?)
    } else {
        Ok(vec![Arc::new(ArticulatedObject::from_json(&text)?)])
    }
}

fn bx(lo: [f64; 3], hi: [f64; 3]) -> BoxSpec {
    BoxSpec {
        center: [
            (lo[0] + hi[0]) / 2.0,
            (lo[1] + hi[1]) / 2.0,
            (lo[2] + hi[2]) / 2.0,
        ],
        half_extents: [
            (hi[0] - lo[0]) / 2.0,
            (hi[1] - lo[1]) / 2.0,
            (hi[2] - lo[2]) / 2.0,
        ],
        rotation: None,
    }
}

fn link(name: &str, parent: Option<&str>, boxes: Vec<BoxSpec>) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        parent: parent.map(Into::into),
        boxes,
    }
}

fn joint(
    link: &str,
    kind: JointKind,
    axis: Option<[f64; 3]>,
    point: Option<[f64; 3]>,
    limits: [f64; 2],
) -> JointSpec {
    JointSpec {
        link: link.into(),
        kind,
        axis_direction: axis,
        axis_point: point,
        path: None,
        limits,
        delta: None,
    }
}

/// Hinged slab spanning x in [x0, x1], with a handle near the free edge.
fn door_leaf(x0: f64, x1: f64, h: f64, hinge_at_x0: bool) -> Vec<BoxSpec> {
    let t = 0.03;
    let (hx0, hx1) = if hinge_at_x0 {
        (x1 - 0.1, x1 - 0.07)
    } else {
        (x0 + 0.07, x0 + 0.1)
    };
    vec![
        bx([x0, 0.0, 0.0], [x1, t, h]),
        bx([hx0, t, h / 2.0 - 0.06], [hx1, t + 0.04, h / 2.0 + 0.06]),
    ]
}

fn door(r: &mut rng::Rng) -> (Vec<LinkSpec>, Vec<JointSpec>) {
    let w = r.random_range(0.7..=1.0);
    let h = r.random_range(0.8..=1.2);
    let range = r.random_range(2.0..=2.7);
    let left = r.random_bool(0.5);
    let links = vec![
        link("frame", None, vec![bx([0.0, -0.4, 0.0], [w, 0.0, h])]),
        link("door", Some("frame"), door_leaf(0.01, w - 0.01, h, left)),
    ];
    let (axis, point) = if left {
        ([0.0, 0.0, 1.0], [0.0, 0.0, 0.0])
    } else {
        ([0.0, 0.0, -1.0], [w, 0.0, 0.0])
    };
    (
        links,
        vec![joint(
            "door",
            JointKind::Revolute,
            Some(axis),
            Some(point),
            [0.0, range],
        )],
    )
}

fn double_door(r: &mut rng::Rng) -> (Vec<LinkSpec>, Vec<JointSpec>) {
    let w = r.random_range(0.9..=1.4);
    let h = r.random_range(0.8..=1.2);
    let links = vec![
        link("frame", None, vec![bx([0.0, -0.4, 0.0], [w, 0.0, h])]),
        link(
            "left",
            Some("frame"),
            door_leaf(0.01, w / 2.0 - 0.01, h, true),
        ),
        link(
            "right",
            Some("frame"),
            door_leaf(w / 2.0 + 0.01, w - 0.01, h, false),
        ),
    ];
    let joints = vec![
        joint(
            "left",
            JointKind::Revolute,
            Some([0.0, 0.0, 1.0]),
            Some([0.0, 0.0, 0.0]),
            [0.0, r.random_range(1.4..=2.0)],
        ),
        joint(
            "right",
            JointKind::Revolute,
            Some([0.0, 0.0, -1.0]),
            Some([w, 0.0, 0.0]),
            [0.0, r.random_range(1.4..=2.0)],
        ),
    ];
    (links, joints)
}

/// Laptop-like: a thin lid hinged along the back edge of a flat base.
fn lid(r: &mut rng::Rng) -> (Vec<LinkSpec>, Vec<JointSpec>) {
    let w = r.random_range(0.3..=0.5);
    let d = r.random_range(0.2..=0.35);
    let range = r.random_range(1.2..=2.0);
    let links = vec![
        link("base", None, vec![bx([0.0, 0.0, 0.0], [w, d, 0.03])]),
        link(
            "lid",
            Some("base"),
            vec![bx([0.0, 0.0, 0.035], [w, d - 0.005, 0.05])],
        ),
    ];
    let axis = Some([-1.0, 0.0, 0.0]);
    (
        links,
        vec![joint(
            "lid",
            JointKind::Revolute,
            axis,
            Some([0.0, d, 0.035]),
            [0.0, range],
        )],
    )
}

fn drawer(r: &mut rng::Rng) -> (Vec<LinkSpec>, Vec<JointSpec>) {
    let w = r.random_range(0.4..=0.7);
    let h = r.random_range(0.3..=0.8);
    let depth = r.random_range(0.4..=0.6);
    let travel = r.random_range(0.3..=0.5);
    let (z0, z1) = (h * 0.55, h * 0.9);
    let zc = (z0 + z1) / 2.0;
    let links = vec![
        link(
            "cabinet",
            None,
            vec![bx([-depth, -w / 2.0, 0.0], [0.0, w / 2.0, h])],
        ),
        link(
            "drawer",
            Some("cabinet"),
            vec![
                bx([0.0, -w / 2.0 + 0.02, z0], [0.03, w / 2.0 - 0.02, z1]),
                bx([0.03, -0.08, zc - 0.015], [0.06, 0.08, zc + 0.015]),
            ],
        ),
    ];
    (
        links,
        vec![joint(
            "drawer",
            JointKind::Prismatic,
            Some([1.0, 0.0, 0.0]),
            None,
            [0.0, travel],
        )],
    )
}

/// Sliding panel in front of a frame, sideways (slider) or upward (window).
fn slider(r: &mut rng::Rng) -> (Vec<LinkSpec>, Vec<JointSpec>) {
    let pw = r.random_range(0.3..=0.5);
    let ph = r.random_range(0.4..=0.7);
    let travel = r.random_range(0.3..=0.5);
    let vertical = r.random_bool(0.5);
    let (fw, fh) = if vertical {
        (pw, ph + travel)
    } else {
        (pw + travel, ph)
    };
    let links = vec![
        link("frame", None, vec![bx([-0.05, 0.0, 0.0], [0.0, fw, fh])]),
        link(
            "panel",
            Some("frame"),
            vec![bx([0.0, 0.01, 0.01], [0.02, pw - 0.01, ph - 0.01])],
        ),
    ];
    let axis = if vertical {
        [0.0, 0.0, 1.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    (
        links,
        vec![joint(
            "panel",
            JointKind::Prismatic,
            Some(axis),
            None,
            [0.0, travel],
        )],
    )
}

/// Block riding a zig-zag track on a vertical board.
fn toy_path(r: &mut rng::Rng) -> (Vec<LinkSpec>, Vec<JointSpec>) {
    let segments = r.random_range(3..=4usize);
    let mut verts = vec![[0.0, 0.05, 0.1]];
    for s in 0..segments {
        let len = r.random_range(0.25..=0.35);
        let angle = r.random_range(25f64..=50.0).to_radians() * if s % 2 == 0 { 1.0 } else { -1.0 };
        let last = verts[verts.len() - 1];
        verts.push([
            last[0] + len * angle.cos(),
            0.05,
            last[2] + len * angle.sin(),
        ]);
    }
    let xmax = verts.iter().map(|v| v[0]).fold(0.0, f64::max);
    let zmax = verts.iter().map(|v| v[2]).fold(0.0, f64::max);
    let length: f64 = verts
        .windows(2)
        .map(|w| (Vec3::from(w[1]) - Vec3::from(w[0])).norm())
        .sum();
    let links = vec![
        link(
            "board",
            None,
            vec![bx([-0.1, -0.02, 0.0], [xmax + 0.1, 0.0, zmax + 0.2])],
        ),
        link(
            "block",
            Some("board"),
            vec![bx([-0.04, 0.0, 0.06], [0.04, 0.1, 0.14])],
        ),
    ];
    let j = JointSpec {
        path: Some(verts),
        ..joint("block", JointKind::Path, None, None, [0.0, length])
    };
    (links, vec![j])
}

fn rotate_spec(spec: &mut ObjectSpec, rot: &Rotation3<f64>) {
    let turn = |v: [f64; 3]| -> [f64; 3] { (rot * Vec3::from(v)).into() };
    for l in &mut spec.links {
        for b in &mut l.boxes {
            b.center = turn(b.center);
            let r = rot
                * b.rotation
                    .map(|r| Rotation3::new(Vec3::from(r)))
                    .unwrap_or_else(Rotation3::identity);
            b.rotation = Some(r.scaled_axis().into());
        }
    }
    for j in &mut spec.joints {
        j.axis_direction = j.axis_direction.map(turn);
        j.axis_point = j.axis_point.map(turn);
        j.path = j.path.take().map(|p| p.into_iter().map(turn).collect());
    }
}

/// One object of `category`, in a frame turned about the vertical by a
/// random yaw.
pub fn generate_one(category: Category, id: &str, seed: u64) -> Result<ObjectSpec> {
    let mut r = rng::from_seed(seed);
    let (links, joints) = match category {
        Category::Door => door(&mut r),
        Category::Lid => lid(&mut r),
        Category::Drawer => drawer(&mut r),
        Category::Slider => slider(&mut r),
        Category::DoubleDoor => double_door(&mut r),
        Category::ToyPath => toy_path(&mut r),
    };
    let mut spec = ObjectSpec {
        id: id.into(),
        category: Some(category.name().into()),
        surface_sample_count: None,
        step_budget: Some(category.default_budget()),
        links,
        joints,
    };
    let yaw = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    rotate_spec(&mut spec, &Rotation3::from_axis_angle(&Vec3::z_axis(), yaw));
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{sample_surface, JointMotion};
    use crate::kinematics::{PRISMATIC_DELTA, REVOLUTE_DELTA};

    #[test]
    fn generation_is_deterministic() {
        let a: Vec<String> = generate(&ObjectSuiteSpec::twelve(7))
            .unwrap()
            .iter()
            .map(|o| o.to_json())
            .collect();
        let b: Vec<String> = generate(&ObjectSuiteSpec::twelve(7))
            .unwrap()
            .iter()
            .map(|o| o.to_json())
            .collect();
        assert_eq!(a, b);
        let c: Vec<String> = generate(&ObjectSuiteSpec::twelve(8))
            .unwrap()
            .iter()
            .map(|o| o.to_json())
            .collect();
        assert_ne!(a, c);
    }

    #[test]
    fn files_are_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = gen_objects(&ObjectSuiteSpec::twelve(7), d1.path()).unwrap();
        let p2 = gen_objects(&ObjectSuiteSpec::twelve(7), d2.path()).unwrap();
        assert_eq!(p1.len(), 12);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        let loaded = load_suite(d1.path()).unwrap();
        assert_eq!(loaded.len(), 12);
    }

    #[test]
    fn every_category_validates_and_samples() {
        for seed in 0..20 {
            for cat in Category::ALL {
                let spec = generate_one(cat, "x", seed).unwrap();
                let obj = ArticulatedObject::from_spec(spec).unwrap();
                obj.check_geometry().unwrap();
                let obs = sample_surface(&obj, &obj.upper_state(), 256, seed).unwrap();
                assert!(obs.points.iter().any(|p| obj.links[p.link].is_movable()));
                assert_eq!(obj.category.as_deref(), Some(cat.name()));
            }
        }
    }

    #[test]
    fn door_is_vertical_revolute() {
        for seed in 0..20 {
            let obj =
                ArticulatedObject::from_spec(generate_one(Category::Door, "d", seed).unwrap())
                    .unwrap();
            let j = obj.joint(0);
            assert_eq!(j.kind(), JointKind::Revolute);
            assert_eq!(j.delta, REVOLUTE_DELTA);
            assert!((j.delta - 0.15).abs() < 1e-3);
            let JointMotion::Revolute { axis, .. } = &j.motion else {
                unreachable!()
            };
            assert!((axis.z.abs() - 1.0).abs() < 1e-12);
            assert!(j.limits[1] >= 2.0 && j.limits[1] <= 2.7);
        }
    }

    #[test]
    fn drawer_is_horizontal_prismatic() {
        for seed in 0..20 {
            let obj =
                ArticulatedObject::from_spec(generate_one(Category::Drawer, "d", seed).unwrap())
                    .unwrap();
            let j = obj.joint(0);
            assert_eq!(j.delta, PRISMATIC_DELTA);
            let JointMotion::Prismatic { axis } = &j.motion else {
                panic!()
            };
            assert!(axis.z.abs() < 1e-12);
        }
    }

    #[test]
    fn toy_path_zig_zags() {
        for seed in 0..20 {
            let obj =
                ArticulatedObject::from_spec(generate_one(Category::ToyPath, "t", seed).unwrap())
                    .unwrap();
            let JointMotion::Path { track } = &obj.joint(0).motion else {
                panic!()
            };
            let v = track.vertices();
            assert!(v.len() >= 4);
            for w in v.windows(3) {
                let turn = (w[1] - w[0])
                    .normalize()
                    .cross(&(w[2] - w[1]).normalize())
                    .norm();
                assert!(turn > 0.5, "segments nearly collinear");
            }
        }
    }

    #[test]
    fn suite_spec_toml() {
        let spec = ObjectSuiteSpec::from_toml(
            "seed = 3\n[categories.laptop]\ncount = 2\n[categories.door]\ncount = 1\nstep_budget = 8\n",
        )
        .unwrap();
        let objs = generate(&spec).unwrap();
        assert_eq!(objs.len(), 3);
        assert_eq!(objs[0].step_budget, Some(8));
        assert_eq!(objs[1].step_budget, Some(12));
        assert!(ObjectSuiteSpec::from_toml("seed = 1\nbogus = 2\n[categories]\n").is_err());
        assert!("window".parse::<Category>().unwrap() == Category::Slider);
    }
}
