use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, Trace};
use crate::interaction::{Aot, Transition};
use crate::kinematics::{Observation, Vec3, FEATURE_DIM};
use crate::sampler::Prediction;
use crate::{rng, Error, Result};

/// Pooled observation embedding: per-feature mean, per-feature max, then the
/// gripper contact (position, normal, attached flag).
pub const EMBED_DIM: usize = 2 * FEATURE_DIM + 7;
pub const POSITION_INPUT: usize = EMBED_DIM + FEATURE_DIM;
pub const DIST_INPUT: usize = EMBED_DIM + 3;
pub const AOT_INPUT: usize = 2 * EMBED_DIM + 3;

pub fn embed(obs: &Observation) -> Vec<f64> {
    let mut out = vec![0.0; EMBED_DIM];
    let n = obs.features.len();
    if n > 0 {
        let mut max = [f64::NEG_INFINITY; FEATURE_DIM];
        for f in &obs.features {
            for k in 0..FEATURE_DIM {
                out[k] += f[k];
                max[k] = max[k].max(f[k]);
            }
        }
        for k in 0..FEATURE_DIM {
            out[k] /= n as f64;
            out[FEATURE_DIM + k] = max[k];
        }
    }
    if let Some(g) = &obs.gripper {
        let base = 2 * FEATURE_DIM;
        out[base..base + 3].copy_from_slice(g.position.as_slice());
        out[base + 3..base + 6].copy_from_slice(g.normal.as_slice());
        out[base + 6] = 1.0;
    }
    out
}

/// History-conditioned embedding fed to the AoT head: the current embedding
/// followed by its difference from the reference (initial or goal) one.
pub fn joint_embedding(curr: &[f64], reference: &[f64]) -> Vec<f64> {
    let mut out = curr.to_vec();
    out.extend(curr.iter().zip(reference).map(|(c, r)| c - r));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent. Does not learn the starter suite within 2000
    /// epochs at the default rate.
    Sgd,
    /// Adam with the usual moment decays (0.9, 0.999).
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the distance regression term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub init_scale: f64,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            init_scale: 0.05,
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("model.hidden must be >= 1".into()));
        }
        if !(self.loss.lambda > 0.0) {
            return Err(Error::Config("loss.lambda must be > 0".into()));
        }
        if !(self.loss.learning_rate > 0.0) {
            return Err(Error::Config("loss.learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamState {
    m: Mlp,
    v: Mlp,
    t: u64,
}

/// One network plus its optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub net: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam: Option<AdamState>,
}

impl Head {
    fn new(sizes: &[usize], scale: f64, seed: u64) -> Self {
        Self {
            net: Mlp::new(sizes, scale, seed),
            adam: None,
        }
    }

    fn apply(&mut self, grads: &Mlp, cfg: &LossConfig) {
        let lr = cfg.learning_rate;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in self.net.params_mut().zip(grads.params()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let net = &mut self.net;
                let st = self.adam.get_or_insert_with(|| AdamState {
                    m: net.zeros_like(),
                    v: net.zeros_like(),
                    t: 0,
                });
                st.t += 1;
                let c1 = 1.0 - B1.powi(st.t as i32);
                let c2 = 1.0 - B2.powi(st.t as i32);
                for (((p, g), m), v) in net
                    .params_mut()
                    .zip(grads.params())
                    .zip(st.m.params_mut())
                    .zip(st.v.params_mut())
                {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Training example for the position head: the executed grasp point.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionExample {
    pub input: Vec<f64>,
    pub label: bool,
}

impl PositionExample {
    pub fn new(obs: &Observation, point: usize, label: bool) -> Self {
        let mut input = embed(obs);
        input.extend_from_slice(&obs.features[point]);
        Self { input, label }
    }

    /// Grasp transitions with a label and an executed point.
    pub fn from_transition(t: &Transition) -> Option<Self> {
        match (t.is_grasp(), t.grasp_index, t.position_label) {
            (true, Some(i), Some(label)) => Some(Self::new(&t.obs_prev, i, label)),
            _ => None,
        }
    }
}

/// Training example for the direction heads: the executed direction and
/// its observed outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionExample {
    pub embed_curr: Vec<f64>,
    pub embed_ref: Vec<f64>,
    pub direction: Vec3,
    pub r_dist: f64,
    pub class: Aot,
}

impl DirectionExample {
    pub fn from_transition(t: &Transition) -> Option<Self> {
        let direction = t.action.direction()?;
        Some(Self {
            embed_curr: embed(&t.obs_prev),
            embed_ref: embed(&t.obs_init),
            direction,
            r_dist: t.outcome.r_dist,
            class: t.outcome.r_aot,
        })
    }

    fn dist_input(&self) -> Vec<f64> {
        let mut x = self.embed_curr.clone();
        x.extend_from_slice(self.direction.as_slice());
        x
    }

    fn aot_input(&self) -> Vec<f64> {
        let mut x = joint_embedding(&self.embed_curr, &self.embed_ref);
        x.extend_from_slice(self.direction.as_slice());
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionLoss {
    /// Mean squared distance error.
    pub dist: f64,
    /// Mean AoT cross-entropy.
    pub aot: f64,
    /// `lambda * dist + aot`.
    pub combined: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of probability `p` against `label`.
pub fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn softmax3(z: &[f64]) -> [f64; 3] {
    let m = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp(), (z[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

fn log_softmax3(z: &[f64], k: usize) -> f64 {
    let m = z[0].max(z[1]).max(z[2]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp() + (z[2] - m).exp()).ln();
    z[k] - lse
}

/// `lambda * mean((pred - target)^2) + mean(CE)` over aligned slices.
pub fn combined_direction_loss(
    lambda: f64,
    pred_dist: &[f64],
    target_dist: &[f64],
    aot_probs: &[[f64; 3]],
    classes: &[Aot],
) -> DirectionLoss {
    let n = pred_dist.len().max(1) as f64;
    let dist = pred_dist
        .iter()
        .zip(target_dist)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    let aot = aot_probs
        .iter()
        .zip(classes)
        .map(|(p, c)| -p[c.class_index()].max(1e-300).ln())
        .sum::<f64>()
        / n;
    DirectionLoss {
        dist,
        aot,
        combined: lambda * dist + aot,
    }
}

fn position_loss_of(net: &Mlp, batch: &[PositionExample], grads: Option<&mut Mlp>) -> f64 {
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = grads;
    for ex in batch {
        let trace = net.forward_traced(&ex.input);
        let z = trace.output()[0];
        let y = if ex.label { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        if let Some(g) = grads.as_deref_mut() {
            net.backward(&trace, &[(sigmoid(z) - y) / n], g);
        }
    }
    loss / n
}

fn dist_loss_of(net: &Mlp, batch: &[DirectionExample], scale: f64, grads: Option<&mut Mlp>) -> f64 {
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = grads;
    for ex in batch {
        let trace = net.forward_traced(&ex.dist_input());
        let err = trace.output()[0] - ex.r_dist;
        loss += err * err;
        if let Some(g) = grads.as_deref_mut() {
            net.backward(&trace, &[scale * 2.0 * err / n], g);
        }
    }
    loss / n
}

fn aot_loss_of(net: &Mlp, batch: &[DirectionExample], grads: Option<&mut Mlp>) -> f64 {
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = grads;
    for ex in batch {
        let trace: Trace = net.forward_traced(&ex.aot_input());
        let z = trace.output();
        let k = ex.class.class_index();
        loss -= log_softmax3(z, k);
        if let Some(g) = grads.as_deref_mut() {
            let mut d = softmax3(z);
            d[k] -= 1.0;
            net.backward(&trace, &[d[0] / n, d[1] / n, d[2] / n], g);
        }
    }
    loss / n
}

pub const CHECKPOINT_FORMAT: &str = "aotsim-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    model: PolicyModel,
}

/// Trainable position, distance and AoT heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub position: Head,
    pub dist: Head,
    pub aot: Head,
}

impl PolicyModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let h = config.hidden;
        let s = config.init_scale;
        Self {
            config,
            seed,
            position: Head::new(&[POSITION_INPUT, h, h, 1], s, rng::derive(seed, &[1])),
            dist: Head::new(&[DIST_INPUT, h, h, 1], s, rng::derive(seed, &[2])),
            aot: Head::new(&[AOT_INPUT, h, h, 3], s, rng::derive(seed, &[3])),
        }
    }

    /// Per-point probability that grasping there leads to motion.
    pub fn score_positions(&self, obs: &Observation) -> Vec<f64> {
        let partial = self.position.net.prefix_partial(&embed(obs));
        obs.features
            .iter()
            .map(|f| sigmoid(self.position.net.forward_with_prefix(&partial, f)[0]))
            .collect()
    }

    pub fn predict_directions(
        &self,
        obs_curr: &Observation,
        obs_ref: &Observation,
        directions: &[Vec3],
    ) -> Vec<Prediction> {
        let e_curr = embed(obs_curr);
        let e_ref = embed(obs_ref);
        let dist_partial = self.dist.net.prefix_partial(&e_curr);
        let aot_partial = self
            .aot
            .net
            .prefix_partial(&joint_embedding(&e_curr, &e_ref));
        directions
            .iter()
            .map(|d| Prediction {
                dist: self
                    .dist
                    .net
                    .forward_with_prefix(&dist_partial, d.as_slice())[0],
                aot: softmax3(&self.aot.net.forward_with_prefix(&aot_partial, d.as_slice())),
            })
            .collect()
    }

    pub fn position_loss(&self, batch: &[PositionExample]) -> f64 {
        position_loss_of(&self.position.net, batch, None)
    }

    pub fn direction_loss(&self, batch: &[DirectionExample]) -> DirectionLoss {
        let dist = dist_loss_of(&self.dist.net, batch, 1.0, None);
        let aot = aot_loss_of(&self.aot.net, batch, None);
        DirectionLoss {
            dist,
            aot,
            combined: self.config.loss.lambda * dist + aot,
        }
    }

    /// One gradient step on mean binary cross-entropy. Returns the loss before
    /// the step.
    pub fn train_position_step(&mut self, batch: &[PositionExample]) -> f64 {
        let mut g = self.position.net.zeros_like();
        let loss = position_loss_of(&self.position.net, batch, Some(&mut g));
        self.position.apply(&g, &self.config.loss);
        loss
    }

    /// One gradient step on `lambda * MSE + CE`. Returns the losses before the
    /// step.
    pub fn train_direction_step(&mut self, batch: &[DirectionExample]) -> DirectionLoss {
        let lambda = self.config.loss.lambda;
        let mut gd = self.dist.net.zeros_like();
        let dist = dist_loss_of(&self.dist.net, batch, lambda, Some(&mut gd));
        let mut ga = self.aot.net.zeros_like();
        let aot = aot_loss_of(&self.aot.net, batch, Some(&mut ga));
        self.dist.apply(&gd, &self.config.loss);
        self.aot.apply(&ga, &self.config.loss);
        DirectionLoss {
            dist,
            aot,
            combined: lambda * dist + aot,
        }
    }

    /// Largest relative error between analytic parameter gradients and
    /// central differences (step `1e-5`) over the three heads. Per head the
    /// error is `|a - n| / (|a| + |n|)` over the whole gradient vector, so
    /// round-off on tiny components cannot dominate.
    pub fn grad_check(
        &self,
        positions: &[PositionExample],
        directions: &[DirectionExample],
    ) -> f64 {
        const H: f64 = 1e-5;
        let lambda = self.config.loss.lambda;
        let check = |net: &Mlp, loss: &dyn Fn(&Mlp, Option<&mut Mlp>) -> f64| {
            let mut g = net.zeros_like();
            loss(net, Some(&mut g));
            let analytic: Vec<f64> = g.params().collect();
            let mut probe = net.clone();
            let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
            for (i, a) in analytic.into_iter().enumerate() {
                let orig = *probe.param_mut(i);
                *probe.param_mut(i) = orig + H;
                let up = loss(&probe, None);
                *probe.param_mut(i) = orig - H;
                let down = loss(&probe, None);
                *probe.param_mut(i) = orig;
                let numeric = (up - down) / (2.0 * H);
                diff += (a - numeric) * (a - numeric);
                norm_a += a * a;
                norm_n += numeric * numeric;
            }
            diff.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(f64::MIN_POSITIVE)
        };
        let p = check(&self.position.net, &|n, g| {
            position_loss_of(n, positions, g)
        });
        let d = check(&self.dist.net, &|n, g| {
            lambda * dist_loss_of(n, directions, lambda, g)
        });
        let a = check(&self.aot.net, &|n, g| aot_loss_of(n, directions, g));
        p.max(d).max(a)
    }

    /// Bit-level equality of every parameter in all three heads.
    pub fn params_bits_eq(&self, other: &Self) -> bool {
        let bits = |m: &Self| -> Vec<u64> {
            [&m.position.net, &m.dist.net, &m.aot.net]
                .iter()
                .flat_map(|n| n.params().map(f64::to_bits).collect::<Vec<_>>())
                .collect()
        };
        bits(self) == bits(other)
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&ck).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.model.config.validate()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
