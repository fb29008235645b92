//! Feed-forward ReLU network used as the transport map, with manual
//! backpropagation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Shape (out, in).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// T: ℝ^d → ℝ^d, affine layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    layers: Vec<Layer>,
}

/// Per-layer gradients with the same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl TransportMap {
    /// Checks that shapes chain from d through the hidden sizes back to d.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("network needs at least one layer"))?;
        let d = first.weight.ncols();
        let mut prev = d;
        for (k, l) in layers.iter().enumerate() {
            if l.weight.ncols() != prev || l.bias.len() != l.weight.nrows() {
                return Err(Error::invalid(format!("layer {k} shape {:?} does not chain", l.weight.dim())));
            }
            prev = l.weight.nrows();
        }
        if prev != d {
            return Err(Error::invalid(format!("output dim {prev} differs from input dim {d}")));
        }
        Ok(Self { layers })
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) weights and biases.
    pub fn random(d: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if d == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((w[1], w[0]), || rng.random_range(-bound..=bound)),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    /// An exact identity map: the first layer splits x into (x⁺, x⁻), middle
    /// layers pass both halves through, and the last layer returns x⁺ − x⁻.
    /// Every hidden size must be at least 2d.
    pub fn identity(d: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() || hidden.iter().any(|&h| h < 2 * d) {
            return Err(Error::invalid(format!("identity map needs hidden sizes ≥ {}", 2 * d)));
        }
        let mut layers = Vec::new();
        let mut w = Array2::zeros((hidden[0], d));
        for i in 0..d {
            w[[i, i]] = 1.0;
            w[[d + i, i]] = -1.0;
        }
        layers.push(Layer { weight: w, bias: Array1::zeros(hidden[0]) });
        for pair in hidden.windows(2) {
            let mut w = Array2::zeros((pair[1], pair[0]));
            for i in 0..2 * d {
                w[[i, i]] = 1.0;
            }
            layers.push(Layer { weight: w, bias: Array1::zeros(pair[1]) });
        }
        let last = *hidden.last().expect("nonempty");
        let mut w = Array2::zeros((d, last));
        for i in 0..d {
            w[[i, i]] = 1.0;
            w[[i, d + i]] = -1.0;
        }
        layers.push(Layer { weight: w, bias: Array1::zeros(d) });
        Self::from_layers(layers)
    }

    pub fn dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.weight.nrows()).collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Applies the map to every row of `x`.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).pop().expect("at least the input")
    }

    /// Activations after every layer (post-ReLU for hidden layers), preceded
    /// by the input itself.
    fn forward_cached(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&l.weight.t()) + &l.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Sum of squared errors ‖T(x) − y‖²_F and its parameter gradient.
    pub fn sse_grad(&self, x: &Array2<f64>, y: &Array2<f64>) -> (f64, Gradients) {
        let acts = self.forward_cached(x);
        let out = acts.last().expect("output");
        let resid = out - y;
        let loss = resid.iter().map(|v| v * v).sum();
        let mut delta = resid * 2.0;
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = &acts[k];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { weight: gw, bias: gb });
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weight);
                // ReLU derivative from the stored post-activation
                ndarray::Zip::from(&mut back).and(input).for_each(|b, &a| {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Parameter update rule with its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &TransportMap) -> Self {
        let zeros: Vec<Layer> = net
            .layers
            .iter()
            .map(|l| Layer {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Self {
            kind,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, net: &mut TransportMap, g: &Gradients) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (l, gl) in net.layers.iter_mut().zip(&g.layers) {
                    l.weight.scaled_add(-self.lr, &gl.weight);
                    l.bias.scaled_add(-self.lr, &gl.bias);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                let lr = self.lr;
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for k in 0..p.len() {
                        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                        p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                };
                for (((l, gl), m), v) in net.layers.iter_mut().zip(&g.layers).zip(&mut self.m).zip(&mut self.v) {
                    update(
                        l.weight.as_slice_mut().expect("standard layout"),
                        gl.weight.as_slice().expect("standard layout"),
                        m.weight.as_slice_mut().expect("standard layout"),
                        v.weight.as_slice_mut().expect("standard layout"),
                    );
                    update(
                        l.bias.as_slice_mut().expect("standard layout"),
                        gl.bias.as_slice().expect("standard layout"),
                        m.bias.as_slice_mut().expect("standard layout"),
                        v.bias.as_slice_mut().expect("standard layout"),
                    );
                }
            }
        }
    }
}
