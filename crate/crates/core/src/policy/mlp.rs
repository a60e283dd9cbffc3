//! Fully connected network with tanh hidden layers, a linear output layer and
//! hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + dot(row, x));
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations recorded by a forward pass: `acts[0]` is the input, the last
/// entry is the (linear) output.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    /// Weights and biases uniform in `[-scale, scale]`.
    pub fn new(sizes: &[usize], scale: f64, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let mut rng = rng::from_seed(seed);
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let mut l = Layer::zeros(w[0], w[1]);
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = rng.random_range(-scale..=scale);
            }
            layers.push(l);
        }
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Mutable access to the `i`-th parameter in layer order (weights, then
    /// bias, per layer).
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_traced(x).acts.pop().unwrap()
    }

    pub fn forward_traced(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.outputs);
            l.affine(&acts[k], &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Trace { acts }
    }

    /// First-layer pre-activation contribution of the leading `prefix.len()`
    /// inputs, bias included. Lets callers share work across inputs that
    /// differ only in their trailing part.
    pub fn prefix_partial(&self, prefix: &[f64]) -> Vec<f64> {
        let l = &self.layers[0];
        (0..l.outputs)
            .map(|o| {
                l.bias[o]
                    + dot(
                        &l.weights[o * l.inputs..o * l.inputs + prefix.len()],
                        prefix,
                    )
            })
            .collect()
    }

    /// Same result as `forward([prefix, suffix])` given `prefix_partial(prefix)`.
    pub fn forward_with_prefix(&self, partial: &[f64], suffix: &[f64]) -> Vec<f64> {
        let l0 = &self.layers[0];
        let start = l0.inputs - suffix.len();
        let mut h: Vec<f64> = (0..l0.outputs)
            .map(|o| {
                let row = &l0.weights[o * l0.inputs + start..(o + 1) * l0.inputs];
                partial[o] + dot(row, suffix)
            })
            .collect();
        let last = self.layers.len() - 1;
        if last > 0 {
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
        let mut next = Vec::new();
        for (k, l) in self.layers.iter().enumerate().skip(1) {
            l.affine(&h, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut h, &mut next);
        }
        h
    }

    /// Accumulates parameter gradients of a scalar loss into `grads` given
    /// the loss gradient with respect to the output.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut Mlp) {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let g = &mut grads.layers[k];
            let input = &trace.acts[k];
            for o in 0..l.outputs {
                g.bias[o] += delta[o];
                let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += delta[o] * x;
                }
            }
            if k == 0 {
                break;
            }
            // through the previous layer's tanh
            let mut prev = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += delta[o] * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.params_mut().for_each(|p| *p *= s);
    }
}
