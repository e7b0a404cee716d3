use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Per-feature affine map `x_n = (x - offset) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Self {
            offset: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Min-max map of each column onto [-1, 1]. Constant columns map to 0.
    pub fn fit_min_max<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut lo = vec![f64::INFINITY; width];
        let mut hi = vec![f64::NEG_INFINITY; width];
        for row in rows {
            for (j, &x) in row.iter().enumerate() {
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
        }
        let mut offset = Vec::with_capacity(width);
        let mut scale = Vec::with_capacity(width);
        for j in 0..width {
            if lo[j].is_finite() && hi[j] > lo[j] {
                offset.push(0.5 * (lo[j] + hi[j]));
                scale.push(2.0 / (hi[j] - lo[j]));
            } else {
                offset.push(if lo[j].is_finite() { lo[j] } else { 0.0 });
                scale.push(1.0);
            }
        }
        Self { offset, scale }
    }

    pub fn width(&self) -> usize {
        self.offset.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| (x - o) * s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| x / s + o)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective: MSE of the unclamped network output.
    pub train_mse: f64,
    /// MSE of the deployed (clamped) output on the validation split.
    pub val_mse: f64,
    pub mu: f64,
}

/// Feed-forward network: tanh hidden layers, affine output clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralPolicy {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub normalization: Normalization,
    #[serde(default)]
    pub training_log: Vec<EpochRecord>,
}

/// Intermediate activations of one forward pass.
pub(crate) struct Trace {
    /// `acts[0]` is the input; `acts[l]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

impl NeuralPolicy {
    /// Zero-initialized network with the given layer sizes (input first).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {layer_sizes:?}")));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Linear,
            normalization: Normalization::identity(layer_sizes[0]),
            training_log: Vec::new(),
        })
    }

    /// Glorot-uniform weights and small uniform biases from `seed`.
    pub fn random(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
            for b in &mut layer.biases {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        Ok(net)
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                found: p.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&acts[i], &mut z);
            let act = self.activation(i);
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            acts.push(z);
        }
        Trace { acts }
    }

    /// Network output before the [0, 1] clamp.
    pub fn forward_unclamped(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                found: x.len(),
            });
        }
        Ok(self.trace(x).acts.pop().expect("output layer"))
    }

    /// Forward pass on an already-normalized input row, clamped to [0, 1].
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.forward_unclamped(x)?;
        y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(y)
    }

    /// Jacobian of the unclamped outputs with respect to the flattened
    /// parameters, written row-major (`outputs x params`) into `out`.
    pub(crate) fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.param_count();
        let n_out = self.output_width();
        debug_assert_eq!(out.len(), n_out * p);
        out.iter_mut().for_each(|v| *v = 0.0);
        let tr = self.trace(x);

        // parameter offset of each layer
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.param_count();
        }

        let last = self.layers.len() - 1;
        let mut delta = Vec::new();
        let mut prev = Vec::new();
        for o in 0..n_out {
            let row = &mut out[o * p..(o + 1) * p];
            // d y_o / d z_last
            delta.clear();
            delta.resize(n_out, 0.0);
            delta[o] = self.output_activation.slope_from_output(tr.acts[last + 1][o]);
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let input = &tr.acts[l];
                let base = offsets[l];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let wrow = &mut row[base + r * layer.inputs..base + (r + 1) * layer.inputs];
                    for (g, &a) in wrow.iter_mut().zip(input) {
                        *g = d * a;
                    }
                    row[base + layer.weights.len() + r] = d;
                }
                if l == 0 {
                    break;
                }
                let act = self.activation(l - 1);
                prev.clear();
                prev.resize(layer.inputs, 0.0);
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                    for (acc, &wv) in prev.iter_mut().zip(w) {
                        *acc += wv * d;
                    }
                }
                for (acc, &a) in prev.iter_mut().zip(input) {
                    *acc *= act.slope_from_output(a);
                }
                std::mem::swap(&mut delta, &mut prev);
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dp::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let net: NeuralPolicy = crate::dp::read_json(path.as_ref())?;
        net.check_shapes()?;
        Ok(net)
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(Error::ShapeMismatch {
                expected: self.layer_sizes.len() - 1,
                found: self.layers.len(),
            });
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.inputs != w[0] || l.outputs != w[1] {
                return Err(Error::ShapeMismatch {
                    expected: w[0] * w[1],
                    found: l.inputs * l.outputs,
                });
            }
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::ShapeMismatch {
                    expected: l.inputs * l.outputs + l.outputs,
                    found: l.weights.len() + l.biases.len(),
                });
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("network parameters must be finite".into()));
            }
        }
        if self.normalization.width() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                found: self.normalization.width(),
            });
        }
        Ok(())
    }
}
