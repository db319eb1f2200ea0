use ndarray::Array2;

use crate::diffcore::{Ops, ParamStore, Slot};

/// Per-dimension affine map `y = x · exp(log_scale) + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub log_scale: Slot,
    pub shift: Slot,
}

impl ActNorm {
    /// Identity-initialised layer.
    pub fn new(name: &str, dim: usize, params: &mut ParamStore) -> Self {
        Self {
            log_scale: params.add(format!("{name}.log_scale"), 1, dim, vec![0.0; dim]),
            shift: params.add(format!("{name}.shift"), 1, dim, vec![0.0; dim]),
        }
    }

    pub fn forward<O: Ops>(&self, ops: &O, p: &ParamStore, x: &O::T) -> O::T {
        let s = ops.exp(&ops.param(p, self.log_scale));
        ops.add(&ops.mul(x, &s), &ops.param(p, self.shift))
    }

    pub fn inverse(&self, p: &ParamStore, y: &Array2<f64>) -> Array2<f64> {
        let ls = p.slice(self.log_scale);
        let sh = p.slice(self.shift);
        let mut x = y.clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - sh[j]) * (-ls[j]).exp();
            }
        }
        x
    }

    pub fn logdet(&self, p: &ParamStore) -> f64 {
        p.slice(self.log_scale).iter().sum()
    }
}
