use super::{Gradients, MlpModel};
use crate::error::{invalid, Result};

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

impl OptimizerState {
    /// Fresh state with `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(model: &MlpModel, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// Applies one bias-corrected adaptive-moment update to `model`.
pub fn optimizer_step(model: &mut MlpModel, state: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    if grads.layer_dims() != model.layer_dims() || state.first_moment.layer_dims() != model.layer_dims() {
        return Err(invalid("gradient or optimizer state shape does not match the model"));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let params = model.tensors_mut();
    let moments = state.first_moment.tensors_mut().zip(state.second_moment.tensors_mut());
    for ((w, g), (m, v)) in params.zip(grads.tensors()).zip(moments) {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Constant `base_lr` through `decay_start_epoch`, then linear decay reaching
/// zero at `total_epochs`. Epochs are 1-based; out-of-range inputs are clamped.
pub fn lr_schedule(epoch: usize, total_epochs: usize, decay_start_epoch: usize, base_lr: f64) -> f64 {
    if epoch <= decay_start_epoch || total_epochs <= decay_start_epoch {
        return base_lr;
    }
    let epoch = epoch.min(total_epochs);
    base_lr * (total_epochs - epoch) as f64 / (total_epochs - decay_start_epoch) as f64
}
