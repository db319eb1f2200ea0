use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Ops, ParamStore, Slot};

use super::EmbeddingConfig;

/// Residual swish network `f: t ↦ R^k` shared by every conditional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    dim: usize,
    w_in: Slot,
    b_in: Slot,
    hidden: Vec<(Slot, Slot)>,
    w_out: Slot,
    b_out: Slot,
}

pub(crate) fn lecun(rng: &mut impl Rng, fan_in: usize, n: usize, gain: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("valid std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl TimeEmbedding {
    pub fn new(cfg: &EmbeddingConfig, params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let w = cfg.width;
        let w_in = params.add("embedding.w_in", 1, w, lecun(rng, 1, w, 1.0));
        let b_in = params.add("embedding.b_in", 1, w, lecun(rng, 1, w, 0.5));
        let hidden = (0..cfg.hidden_layers)
            .map(|i| {
                let wl = params.add(format!("embedding.hidden{i}.w"), w, w, lecun(rng, w, w * w, 1.0));
                let bl = params.add(format!("embedding.hidden{i}.b"), 1, w, vec![0.0; w]);
                (wl, bl)
            })
            .collect();
        let w_out = params.add("embedding.w_out", w, cfg.dim, lecun(rng, w, w * cfg.dim, 1.0));
        let b_out = params.add("embedding.b_out", 1, cfg.dim, vec![0.0; cfg.dim]);
        Self {
            dim: cfg.dim,
            w_in,
            b_in,
            hidden,
            w_out,
            b_out,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output_slots(&self) -> (Slot, Slot) {
        (self.w_out, self.b_out)
    }

    /// `t` is `rows × 1`; returns `rows × k`.
    pub fn forward<O: Ops>(&self, ops: &O, p: &ParamStore, t: &O::T) -> O::T {
        let pre = ops.add(&ops.matmul(t, &ops.param(p, self.w_in)), &ops.param(p, self.b_in));
        let mut h = ops.swish(&pre);
        for (w, b) in &self.hidden {
            let z = ops.add(&ops.matmul(&h, &ops.param(p, *w)), &ops.param(p, *b));
            h = ops.add(&h, &ops.swish(&z));
        }
        ops.add(&ops.matmul(&h, &ops.param(p, self.w_out)), &ops.param(p, self.b_out))
    }
}
