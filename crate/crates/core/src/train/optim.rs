//! Nesterov SGD and the polynomial learning-rate schedule.

use crate::error::{Error, Result};
use crate::net::{LayerGradients, UNetModel};

/// `lr0·(1 − epoch/total)^0.9`; zero once `epoch ≥ total`.
pub fn poly_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if epoch >= total {
        return 0.0;
    }
    lr0 * (1.0 - epoch as f64 / total as f64).powf(0.9)
}

/// One Nesterov step on a flat buffer:
/// `v ← μv − lr·g; θ ← θ + μv − lr·g`.
pub fn nesterov_update(theta: &mut [f32], v: &mut [f32], g: &[f32], lr: f32, momentum: f32) {
    for ((t, v), &g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = momentum * *v - lr * g;
        *t += momentum * *v - lr * g;
    }
}

/// Optimizer state: one velocity buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(model: &UNetModel<f32>, momentum: f32) -> Self {
        Self {
            momentum,
            velocity: model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }

    /// Applies one update. A non-finite gradient aborts before any parameter
    /// changes, naming the offending tensor.
    pub fn step(&mut self, model: &mut UNetModel<f32>, grads: &LayerGradients<f32>, lr: f32) -> Result<()> {
        let gs = grads.slices();
        if gs.len() != self.velocity.len() {
            return Err(Error::Contract("gradients do not match optimizer state".into()));
        }
        for (name, g) in grads.names().iter().zip(&gs) {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {name} at index {i}")));
            }
        }
        for ((theta, v), g) in model.param_slices_mut().into_iter().zip(&mut self.velocity).zip(gs) {
            if theta.len() != g.len() {
                return Err(Error::Contract("gradient shape differs from parameter".into()));
            }
            nesterov_update(theta, v, g, lr, self.momentum);
        }
        Ok(())
    }
}
