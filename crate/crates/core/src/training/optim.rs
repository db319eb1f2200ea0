use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies one update. A non-finite gradient leaves everything untouched
    /// and returns `Ok(false)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(false);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(true)
    }
}

/// Learning rate after `step` of `total` steps: cosine decay from `peak` to
/// `floor · peak`, or constant when `cosine` is off. The first `warmup` steps
/// ramp linearly up to that value.
pub fn learning_rate(peak: f64, floor: f64, cosine: bool, warmup: usize, step: usize, total: usize) -> f64 {
    let ramp = if step < warmup { (step + 1) as f64 / warmup as f64 } else { 1.0 };
    if !cosine || total <= 1 {
        return ramp * peak;
    }
    let frac = (step as f64 / (total - 1) as f64).min(1.0);
    let lo = floor * peak;
    ramp * (lo + 0.5 * (peak - lo) * (1.0 + (PI * frac).cos()))
}
