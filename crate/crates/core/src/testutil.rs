//! Analytic maps and fields shared by unit tests.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bijection::{ArchitectureConfig, ConditionalBijection, DomainBox, EmbeddingConfig, InverseOptions};
use crate::diffcore::{Ops, ParamStore};
use crate::error::Result;
use crate::field::LagrangianField;

fn row_time(t: &Array2<f64>, r: usize) -> f64 {
    t[[if t.nrows() == 1 { 0 } else { r }, 0]]
}

/// `Φ_t(x) = e^{-t} x`, whose velocity is `v(t, x) = x`.
#[derive(Debug, Clone)]
pub struct Decay(pub usize);

impl ConditionalBijection for Decay {
    fn dim(&self) -> usize {
        self.0
    }
    fn transform<O: Ops>(&self, ops: &O, _p: &ParamStore, t: &O::T, x: &O::T) -> O::T {
        ops.mul(x, &ops.exp(&ops.neg(t)))
    }
    fn inverse_transform(&self, _p: &ParamStore, t: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
        let mut x = y.clone();
        for (r, mut row) in x.rows_mut().into_iter().enumerate() {
            let tr = row_time(t, r);
            row.mapv_inplace(|v| v * tr.exp());
        }
        Ok(x)
    }
}

/// `Φ_t(x) = x − u t`: the base density translated with constant velocity `u`.
#[derive(Debug, Clone)]
pub struct Translate(pub Vec<f64>);

impl ConditionalBijection for Translate {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn transform<O: Ops>(&self, ops: &O, _p: &ParamStore, t: &O::T, x: &O::T) -> O::T {
        let u = ops.constant(Array2::from_shape_vec((1, self.0.len()), self.0.clone()).unwrap());
        ops.sub(x, &ops.mul(t, &u))
    }
    fn inverse_transform(&self, _p: &ParamStore, t: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
        let mut x = y.clone();
        for (r, mut row) in x.rows_mut().into_iter().enumerate() {
            let tr = row_time(t, r);
            for (v, u) in row.iter_mut().zip(&self.0) {
                *v += u * tr;
            }
        }
        Ok(x)
    }
}

/// Wraps an analytic map into a field on `(−half_width, half_width)^d`.
pub fn analytic_field<M: ConditionalBijection>(map: M, half_width: f64, time_range: (f64, f64), log_mass: f64) -> LagrangianField<M> {
    let d = map.dim();
    let mut p = ParamStore::new();
    let s = p.add("log_total_mass", 1, 1, vec![log_mass]);
    LagrangianField::from_parts(map, p, s, DomainBox::symmetric(d, half_width), time_range).unwrap()
}

/// A small randomly initialised network field on `(−4, 4)^d`.
pub fn random_field(dim: usize, seed: u64) -> LagrangianField {
    let mut arch = ArchitectureConfig::standard(3, 3, 16, 15.0);
    arch.embedding = EmbeddingConfig {
        dim: 6,
        width: 16,
        hidden_layers: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = LagrangianField::new(&arch, DomainBox::symmetric(dim, 4.0), (0.0, 1.2), 0.0, &mut rng).unwrap();
    f.stack_mut().set_inverse_options(InverseOptions {
        tol: 1e-13,
        max_iter: 1000,
    });
    f
}
