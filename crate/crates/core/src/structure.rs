//! Joint-parameter inference from executed action traces.
//!
//! Prismatic joints: the sign-aligned mean action direction. Revolute joints:
//! the normal of the plane the actions share, and an axis point voted from
//! intersections of in-plane lines perpendicular to each action.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::interaction::{Action, Env, Transition};
use crate::kinematics::{
    forward_kinematics, joint_tangent, ArticulatedObject, JointMotion, JointState, SurfacePoint,
    Vec3,
};
use crate::{Error, Result};

/// Line pairs meeting at less than this angle are ignored when voting.
pub const MIN_INTERSECTION_ANGLE_DEG: f64 = 5.0;

/// Prismatic residual below which blind inference reports a prismatic joint,
/// degrees.
pub const PRISMATIC_RESIDUAL_DEG: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub directions: Vec<Vec3>,
    pub grasp_positions: Vec<Vec3>,
}

impl ActionTrace {
    pub fn new(directions: Vec<Vec3>, grasp_positions: Vec<Vec3>) -> Result<Self> {
        if directions.len() != grasp_positions.len() {
            return Err(Error::Shape {
                expected: directions.len(),
                got: grasp_positions.len(),
            });
        }
        if let Some(d) = directions.iter().find(|d| (d.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::invalid(format!(
                "trace direction {d:?} is not unit length"
            )));
        }
        Ok(Self {
            directions,
            grasp_positions,
        })
    }

    /// Directional steps of an episode: each executed direction with the
    /// gripper position it was applied at.
    pub fn from_transitions(transitions: &[Transition]) -> Result<Self> {
        let mut dirs = Vec::new();
        let mut points = Vec::new();
        for t in transitions {
            if let (Some(d), Some(g)) = (t.action.direction(), t.obs_prev.gripper) {
                dirs.push(d);
                points.push(g.position);
            }
        }
        Self::new(dirs, points)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Applies a rigid motion to every position and direction.
    pub fn transformed(&self, pose: &crate::kinematics::Pose) -> Self {
        Self {
            directions: self.directions.iter().map(|d| pose.rotation * d).collect(),
            grasp_positions: self
                .grasp_positions
                .iter()
                .map(|p| (pose * Point3::from(*p)).coords)
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticulationKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArticulationEstimate {
    pub kind: ArticulationKind,
    /// Axis direction (revolute) or motion direction (prismatic).
    pub direction: Vec3,
    /// A point on the axis line (revolute only).
    pub point: Option<Vec3>,
    /// Mean angular deviation in degrees (prismatic) or median distance of
    /// the voted intersections to the axis point in meters (revolute).
    pub residual: f64,
}

fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.normalize()
        .dot(&b.normalize())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

pub fn infer_prismatic(trace: &ActionTrace) -> Result<ArticulationEstimate> {
    if trace.len() < 2 {
        return Err(Error::InsufficientData(
            "prismatic inference needs >= 2 steps".into(),
        ));
    }
    let first = trace.directions[0];
    let aligned: Vec<Vec3> = trace
        .directions
        .iter()
        .map(|d| if d.dot(&first) < 0.0 { -d } else { *d })
        .collect();
    let mean: Vec3 = aligned.iter().sum::<Vec3>() / aligned.len() as f64;
    if mean.norm() < 1e-6 {
        return Err(Error::DegenerateTrace(
            "mean action direction vanishes".into(),
        ));
    }
    let direction = mean.normalize();
    let residual = aligned
        .iter()
        .map(|d| angle_deg(d, &direction))
        .sum::<f64>()
        / aligned.len() as f64;
    Ok(ArticulationEstimate {
        kind: ArticulationKind::Prismatic,
        direction,
        point: None,
        residual,
    })
}

/// `sum_t |n . a_t|`.
pub fn plane_objective(n: &Vec3, directions: &[Vec3]) -> f64 {
    directions.iter().map(|a| n.dot(a).abs()).sum()
}

/// Smallest-eigenvalue direction of the scatter matrix of the directions.
fn eigen_initializer(directions: &[Vec3]) -> Result<Vec3> {
    let m: Matrix3<f64> = directions.iter().map(|a| a * a.transpose()).sum();
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (mid, max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if mid <= 1e-9 * max.max(1e-300) {
        return Err(Error::DegenerateTrace(
            "action directions are collinear; use prismatic inference".into(),
        ));
    }
    Ok(eig.eigenvectors.column(order[0]).into_owned().normalize())
}

/// Minimizes `f` over `[-r, r]` by golden-section search.
fn golden(f: impl Fn(f64) -> f64, r: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-r, r);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    if f(x) <= f(0.0) {
        x
    } else {
        0.0
    }
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

/// Coordinate descent on the sphere: alternately moves along the two
/// tangent directions of the current estimate until the objective changes by
/// less than `1e-10`.
fn coordinate_descent(start: Vec3, directions: &[Vec3]) -> Vec3 {
    let mut n = start;
    let mut f = plane_objective(&n, directions);
    let mut radius: f64 = 0.5;
    for _ in 0..500 {
        let before = f;
        let (u, v) = tangent_basis(&n);
        for axis in [u, v] {
            let step = golden(
                |t| plane_objective(&(n + axis * t).normalize(), directions),
                radius,
            );
            let cand = (n + axis * step).normalize();
            let fc = plane_objective(&cand, directions);
            if fc < f {
                n = cand;
                f = fc;
            }
        }
        if before - f < 1e-10 {
            if radius < 1e-9 {
                break;
            }
            radius *= 0.25;
        }
    }
    n
}

/// Unit normal minimizing `sum_t |n . a_t|`. Starts from the eigen
/// initializer, runs coordinate descent, then compares against every
/// pairwise cross product of the directions, where the exact minimum of this
/// piecewise-linear objective lies.
pub fn fit_plane_normal(trace: &ActionTrace) -> Result<Vec3> {
    fit_plane_normal_dirs(&trace.directions)
}

pub fn fit_plane_normal_dirs(directions: &[Vec3]) -> Result<Vec3> {
    if directions.len() < 3 {
        return Err(Error::InsufficientData("plane fit needs >= 3 steps".into()));
    }
    let init = eigen_initializer(directions)?;
    let mut best = coordinate_descent(init, directions);
    let mut best_f = plane_objective(&best, directions);
    for i in 0..directions.len() {
        for j in i + 1..directions.len() {
            let c = directions[i].cross(&directions[j]);
            if c.norm() < 1e-12 {
                continue;
            }
            let c = c.normalize();
            let f = plane_objective(&c, directions);
            if f < best_f - 1e-15 {
                best = c;
                best_f = f;
            }
        }
    }
    // keep the initializer's hemisphere
    Ok(if best.dot(&init) < 0.0 { -best } else { best })
}

/// Point minimizing the sum of distances. A data point is returned exactly
/// when it satisfies the optimality condition; otherwise Weiszfeld iteration
/// runs to convergence.
pub fn geometric_median(points: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    if points.is_empty() {
        return None;
    }
    let scale = points.iter().map(|p| p.norm()).fold(1e-300, f64::max);
    let tie = 1e-13 * scale;
    for (k, pk) in points.iter().enumerate() {
        let mut pull = Vector2::zeros();
        let mut multiplicity = 0usize;
        for (i, p) in points.iter().enumerate() {
            let d = (p - pk).norm();
            if i == k || d <= tie {
                multiplicity += 1;
            } else {
                pull += (p - pk) / d;
            }
        }
        if pull.norm() <= multiplicity as f64 {
            return Some(*pk);
        }
    }
    let mut x: Vector2<f64> = points.iter().sum::<Vector2<f64>>() / points.len() as f64;
    for _ in 0..100_000 {
        let mut num = Vector2::zeros();
        let mut den = 0.0;
        for p in points {
            let d = (p - x).norm().max(tie);
            num += p / d;
            den += 1.0 / d;
        }
        let next = num / den;
        let moved = (next - x).norm();
        x = next;
        if moved <= 1e-15 * scale {
            break;
        }
    }
    Some(x)
}

pub fn infer_revolute(trace: &ActionTrace) -> Result<ArticulationEstimate> {
    if trace.len() < 3 {
        return Err(Error::InsufficientData(
            "revolute inference needs >= 3 steps".into(),
        ));
    }
    let n = fit_plane_normal(trace)?;
    let (u, v) = tangent_basis(&n);
    let mut lines = Vec::new();
    for (d, p) in trace.directions.iter().zip(&trace.grasp_positions) {
        let d2 = Vector2::new(d.dot(&u), d.dot(&v));
        if d2.norm() < 1e-9 {
            continue;
        }
        let d2 = d2.normalize();
        let p2 = Vector2::new(p.dot(&u), p.dot(&v));
        // line of points x with d2 . (x - p2) = 0
        lines.push((d2, d2.dot(&p2)));
    }
    let min_sin = MIN_INTERSECTION_ANGLE_DEG.to_radians().sin();
    let mut hits = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (a, ca) = lines[i];
            let (b, cb) = lines[j];
            let det = a.x * b.y - a.y * b.x;
            if det.abs() < min_sin {
                continue;
            }
            hits.push(Vector2::new(
                (ca * b.y - cb * a.y) / det,
                (a.x * cb - b.x * ca) / det,
            ));
        }
    }
    if hits.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} well-conditioned intersections, need >= 2",
            hits.len()
        )));
    }
    let c = geometric_median(&hits).unwrap();
    let mut dists: Vec<f64> = hits.iter().map(|h| (h - c).norm()).collect();
    dists.sort_by(f64::total_cmp);
    let residual = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    let height = trace.grasp_positions.iter().map(|p| p.dot(&n)).sum::<f64>() / trace.len() as f64;
    Ok(ArticulationEstimate {
        kind: ArticulationKind::Revolute,
        direction: n,
        point: Some(u * c.x + v * c.y + n * height),
        residual,
    })
}

/// Joint kind unknown: prismatic when the aligned directions agree to within
/// 10 degrees on average, otherwise revolute.
pub fn infer_blind(trace: &ActionTrace) -> Result<ArticulationEstimate> {
    let p = infer_prismatic(trace)?;
    if p.residual < PRISMATIC_RESIDUAL_DEG {
        return Ok(p);
    }
    infer_revolute(trace)
}

/// Angle between axis directions in degrees (sign-agnostic) and, for
/// revolute joints, the distance between the two axis lines in meters.
pub fn axis_error(
    estimate: &ArticulationEstimate,
    truth: &ArticulationEstimate,
) -> Result<(f64, f64)> {
    if estimate.kind != truth.kind {
        return Err(Error::invalid("axis_error: joint kinds differ"));
    }
    let a = estimate.direction.normalize();
    let b = truth.direction.normalize();
    let angle = a.cross(&b).norm().atan2(a.dot(&b).abs()).to_degrees();
    let dist = match (estimate.kind, estimate.point, truth.point) {
        (ArticulationKind::Revolute, Some(p), Some(q)) => line_distance(&p, &a, &q, &b),
        (ArticulationKind::Revolute, _, _) => {
            return Err(Error::invalid("revolute estimate lacks a point"))
        }
        (ArticulationKind::Prismatic, _, _) => 0.0,
    };
    Ok((angle, dist))
}

fn line_distance(p: &Vec3, a: &Vec3, q: &Vec3, b: &Vec3) -> f64 {
    let w = q - p;
    let c = a.cross(b);
    if c.norm() < 1e-12 {
        (w - a * w.dot(a)).norm()
    } else {
        w.dot(&c).abs() / c.norm()
    }
}

/// True axis of joint `k` in the world frame at `state`. Path joints have no
/// single axis and are rejected.
pub fn ground_truth(
    object: &ArticulatedObject,
    k: usize,
    state: &JointState,
) -> Result<ArticulationEstimate> {
    let link = object.joint_links[k];
    let parent = object.links[link]
        .parent
        .map(|p| forward_kinematics(object, state).map(|poses| poses[p]))
        .transpose()?
        .unwrap_or_else(crate::kinematics::Pose::identity);
    match &object.joint(k).motion {
        JointMotion::Revolute { axis, point } => Ok(ArticulationEstimate {
            kind: ArticulationKind::Revolute,
            direction: parent.rotation * axis.into_inner(),
            point: Some((parent * Point3::from(*point)).coords),
            residual: 0.0,
        }),
        JointMotion::Prismatic { axis } => Ok(ArticulationEstimate {
            kind: ArticulationKind::Prismatic,
            direction: parent.rotation * axis.into_inner(),
            point: None,
            residual: 0.0,
        }),
        JointMotion::Path { .. } => Err(Error::invalid("path joints have no single axis")),
    }
}

/// Drives a grasp along the exact joint tangent: `steps / 2` steps forward,
/// the rest backward. This is the noiseless oracle trace used to evaluate
/// axis inference.
pub fn tangent_trace(
    object: std::sync::Arc<ArticulatedObject>,
    state: JointState,
    grasp: &SurfacePoint,
    steps: usize,
    obs_seed: u64,
) -> Result<Vec<Transition>> {
    noisy_tangent_trace(object, state, grasp, steps, obs_seed, 0.0, 0)
}

/// [`tangent_trace`] where each step is replaced by a uniformly random
/// direction with probability `eps`.
pub fn noisy_tangent_trace(
    object: std::sync::Arc<ArticulatedObject>,
    state: JointState,
    grasp: &SurfacePoint,
    steps: usize,
    obs_seed: u64,
    eps: f64,
    seed: u64,
) -> Result<Vec<Transition>> {
    let mut rng = crate::rng::from_seed(seed);
    let mut env = Env::new(object.clone(), state, obs_seed, 0)?;
    let mut out = vec![env.step(Action::Grasp {
        position: grasp.position,
    })?];
    for s in 0..steps {
        let g = env
            .grasp_point()
            .ok_or_else(|| Error::Environment("grasp missed".into()))?;
        let dir = if eps > 0.0 && rng.random::<f64>() < eps {
            crate::sampler::uniform_directions(1, rng.random()).directions[0]
        } else {
            let t = joint_tangent(&object, env.state(), &g)?.direction;
            if s < steps / 2 {
                t
            } else {
                -t
            }
        };
        out.push(env.step(Action::Move { direction: dir })?);
    }
    Ok(out)
}
