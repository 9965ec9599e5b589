//! Dense feed-forward classifier with hand-written gradients.
//!
//! Weights of layer `l` are stored row-major with shape
//! `(layer_dims[l + 1], layer_dims[l])`. Hidden layers use a rectifier, the
//! last layer is affine and feeds a softmax.

mod backward;
mod checkpoint;
mod optim;

pub use backward::{backward, Backward};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use optim::{lr_schedule, optimizer_step, OptimizerState};

use rand::Rng;

use crate::error::{invalid, Result};
use crate::prob::{softmax, ProbDist};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Parameters of a dense classifier. A second instance serves as the mean
/// teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Per-layer values recorded during a forward pass, needed by backprop.
pub(crate) struct Trace {
    /// `inputs[l]` is the input vector of layer `l`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer; the last entry holds the logits.
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("model has at least one layer")
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(invalid("layer_dims needs at least an input and an output size"));
    }
    if layer_dims.contains(&0) {
        return Err(invalid("layer sizes must be positive"));
    }
    Ok(())
}

impl MlpModel {
    /// All-zero parameters. Every input maps to the uniform distribution.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let weights = layer_dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Ok(Self { layer_dims: layer_dims.to_vec(), weights, biases, activation: Activation::Relu })
    }

    /// Scaled uniform fan-in initialization: weights drawn from
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, biases zero.
    pub fn init<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        for (l, w) in model.weights.iter_mut().enumerate() {
            let bound = (6.0 / layer_dims[l] as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Assembles a model from explicit parameters, validating shapes.
    pub fn from_parts(layer_dims: &[usize], weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        check_dims(layer_dims)?;
        let n = layer_dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(invalid(format!(
                "expected {n} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..n {
            if weights[l].len() != layer_dims[l] * layer_dims[l + 1] {
                return Err(invalid(format!("weight matrix {l} has {} entries", weights[l].len())));
            }
            if biases[l].len() != layer_dims[l + 1] {
                return Err(invalid(format!("bias vector {l} has {} entries", biases[l].len())));
            }
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), weights, biases, activation: Activation::Relu })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of dense layers (layer transitions).
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Parameter tensors in canonical order: all weights, then all biases.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().chain(self.biases.iter()).map(Vec::as_slice)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).map(Vec::as_mut_slice)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// True when `other` has identical layer sizes.
    pub fn same_shape(&self, other: &MlpModel) -> bool {
        self.layer_dims == other.layer_dims
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.pre.pop().unwrap())
    }

    /// Softmax class probabilities for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<ProbDist> {
        Ok(ProbDist::from_normalized(softmax(&self.logits(x)?)))
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!(
                "feature vector has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature vector contains non-finite values"));
        }
        let n = self.num_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut current = x.to_vec();
        for l in 0..n {
            let in_dim = self.layer_dims[l];
            let out_dim = self.layer_dims[l + 1];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                *zo += row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>();
            }
            debug_assert_eq!(z.len(), out_dim);
            let next = if l + 1 < n { z.iter().map(|&v| self.activation.apply(v)).collect() } else { Vec::new() };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }
}

/// Parameter gradients, shape-congruent with the model they differentiate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layer_dims: model.layer_dims.clone(),
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Same canonical order as [`MlpModel::tensors`].
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().chain(self.biases.iter()).map(Vec::as_slice)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).map(Vec::as_mut_slice)
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|&g| g == 0.0))
    }
}
