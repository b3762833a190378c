//! Small multilayer perceptrons with taped gradients, policy heads, finite
//! difference gradient checks and a flat checkpoint format.

mod checkpoint;
mod gradcheck;
mod policy;

pub use checkpoint::{load_tensors, save_tensors};
pub use gradcheck::{grad_check, GradReport};
pub use policy::{
    Distribution, Policy, PolicyHead, PolicyKind, PolicyVars, LOG_STD_MAX, LOG_STD_MIN,
};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs × outputs`
    pub weight: Array2<f64>,
    /// `1 × outputs`
    pub bias: Array2<f64>,
}

/// Fully connected network; hidden layers use `activation`, the output layer
/// is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Tape handles for one registration of an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Gradient in the same order as [`MlpParams::to_flat`].
    pub fn flat_grad(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(grads.get_or_zeros(tape, *w).iter());
            out.extend(grads.get_or_zeros(tape, *b).iter());
        }
        out
    }
}

/// Random matrix with orthonormal columns (or rows, when wide), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let mut q = Array2::<f64>::zeros((tall, short));
    for x in q.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    // Modified Gram-Schmidt on the columns.
    for j in 0..short {
        for k in 0..j {
            let dot: f64 = q.column(j).dot(&q.column(k));
            let prev = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-dot, &prev);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|x| x / norm);
    }
    let q = if rows >= cols { q } else { q.reversed_axes() };
    q * gain
}

impl MlpParams {
    /// Orthogonal weights (gain 1 on hidden layers, `output_gain` on the last
    /// layer) and zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: orthogonal(w[0], w[1], if i + 1 == n { output_gain } else { 1.0 }, rng),
                bias: Array2::zeros((1, w[1])),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array2::zeros((1, w[1])),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Layer by layer: weight (row-major), then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut offset = 0;
        for l in &mut self.layers {
            for x in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *x = flat[offset];
                offset += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Input(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite network input".into()));
        }
        let n = self.layers.len();
        let mut h = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight) + &l.bias;
            if i + 1 < n {
                match self.activation {
                    Activation::Tanh => h.mapv_inplace(crate::autodiff::tanh),
                    Activation::Relu => h.mapv_inplace(|x| x.max(0.0)),
                }
            }
        }
        Ok(h)
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.leaf(l.weight.clone()));
            biases.push(tape.leaf(l.bias.clone()));
        }
        MlpVars { weights, biases }
    }

    /// Taped forward pass using parameters registered by [`MlpParams::register`].
    pub fn apply(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Var {
        assert_eq!(tape.shape(input).1, self.input_dim(), "network input width");
        let n = self.layers.len();
        let mut h = input;
        for i in 0..n {
            let z = tape.matmul(h, vars.weights[i]);
            h = tape.add(z, vars.biases[i]);
            if i + 1 < n {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        h
    }

    pub fn to_tensors(&self) -> Vec<Array2<f64>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn from_tensors(tensors: &[Array2<f64>], activation: Activation) -> Result<Self> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(2) {
            return Err(Error::Input("expected weight/bias tensor pairs".into()));
        }
        let mut layers = Vec::new();
        for pair in tensors.chunks(2) {
            let (w, b) = (&pair[0], &pair[1]);
            if b.nrows() != 1 || b.ncols() != w.ncols() {
                return Err(Error::Input("bias shape does not match weight".into()));
            }
            if let Some(prev) = layers.last() {
                let prev: &Layer = prev;
                if prev.weight.ncols() != w.nrows() {
                    return Err(Error::Input("consecutive layer sizes disagree".into()));
                }
            }
            layers.push(Layer {
                weight: w.clone(),
                bias: b.clone(),
            });
        }
        Ok(Self { layers, activation })
    }
}
