use ndarray::{ArcArray2, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::embedding::lecun;
use crate::diffcore::{Eager, Ops, ParamStore, Slot};
use crate::error::{Error, Result};

/// Product `H₁ H₂ ⋯ H_n` of reflections `H_i = I − 2 v_i v_iᵀ / ‖v_i‖²`.
pub fn householder_orthogonal(vectors: &[Vec<f64>], dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut q: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Shape(format!("reflection vector of length {} in dimension {dim}", v.len())));
        }
        let nn: f64 = v.iter().map(|x| x * x).sum();
        if nn == 0.0 {
            return Err(Error::ZeroVector);
        }
        // Q ← Q H: each row r becomes r − 2 (r·v) vᵀ / ‖v‖².
        for row in q.iter_mut() {
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            let c = 2.0 * dot / nn;
            for (r, vi) in row.iter_mut().zip(v) {
                *r -= c * vi;
            }
        }
    }
    Ok(q)
}

/// Conditional SVD layer `y = U(e) Σ V(e)ᵀ x`.
///
/// Both orthogonal factors are products of Householder reflections whose
/// vectors are unconditional base vectors plus the output of a one-hidden-layer
/// swish conditioner on the time embedding. `Σ = diag(exp(log_sigma))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdLayer {
    dim: usize,
    reflections: usize,
    base: Slot,
    w_hidden: Slot,
    b_hidden: Slot,
    w_cond: Slot,
    b_cond: Slot,
    pub log_sigma: Slot,
}

impl SvdLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        dim: usize,
        embed_dim: usize,
        reflections: usize,
        conditioner_width: usize,
        params: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let n = 2 * reflections * dim;
        let base_init: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let base = params.add(format!("{name}.base"), 1, n, base_init);
        let w_hidden = params.add(
            format!("{name}.cond.w0"),
            embed_dim,
            conditioner_width,
            lecun(rng, embed_dim, embed_dim * conditioner_width, 1.0),
        );
        let b_hidden = params.add(format!("{name}.cond.b0"), 1, conditioner_width, vec![0.0; conditioner_width]);
        let w_cond = params.add(
            format!("{name}.cond.w1"),
            conditioner_width,
            n,
            lecun(rng, conditioner_width, conditioner_width * n, 0.1),
        );
        let b_cond = params.add(format!("{name}.cond.b1"), 1, n, vec![0.0; n]);
        let log_sigma = params.add(format!("{name}.log_sigma"), 1, dim, vec![0.0; dim]);
        Self {
            dim,
            reflections,
            base,
            w_hidden,
            b_hidden,
            w_cond,
            b_cond,
            log_sigma,
        }
    }

    pub fn reflections(&self) -> usize {
        self.reflections
    }

    /// All `2 n d` reflection coordinates; the first `n d` define `V`, the rest `U`.
    fn vectors<O: Ops>(&self, ops: &O, p: &ParamStore, emb: &O::T) -> O::T {
        let hidden = ops.swish(&ops.add(&ops.matmul(emb, &ops.param(p, self.w_hidden)), &ops.param(p, self.b_hidden)));
        let cond = ops.add(&ops.matmul(&hidden, &ops.param(p, self.w_cond)), &ops.param(p, self.b_cond));
        ops.add(&cond, &ops.param(p, self.base))
    }

    fn reflect<O: Ops>(ops: &O, x: &O::T, v: &O::T) -> O::T {
        let dot = ops.sum_cols(&ops.mul(x, v));
        let nn = ops.sum_cols(&ops.square(v));
        let c = ops.scale(&ops.div(&dot, &nn), 2.0);
        ops.sub(x, &ops.mul(&c, v))
    }

    fn vector<O: Ops>(&self, ops: &O, all: &O::T, index: usize) -> O::T {
        ops.slice_cols(all, index * self.dim, self.dim)
    }

    pub fn forward<O: Ops>(&self, ops: &O, p: &ParamStore, x: &O::T, emb: &O::T) -> O::T {
        let n = self.reflections;
        let all = self.vectors(ops, p, emb);
        let mut z = x.clone();
        for i in 0..n {
            z = Self::reflect(ops, &z, &self.vector(ops, &all, i));
        }
        z = ops.mul(&z, &ops.exp(&ops.param(p, self.log_sigma)));
        for i in (0..n).rev() {
            z = Self::reflect(ops, &z, &self.vector(ops, &all, n + i));
        }
        z
    }

    pub fn inverse(&self, p: &ParamStore, y: &Array2<f64>, emb: &ArcArray2<f64>) -> Array2<f64> {
        let ops = Eager;
        let n = self.reflections;
        let all = self.vectors(&ops, p, emb);
        let mut z: ArcArray2<f64> = y.clone().into_shared();
        for i in 0..n {
            z = Self::reflect(&ops, &z, &self.vector(&ops, &all, n + i));
        }
        z = ops.mul(&z, &ops.exp(&ops.neg(&ops.param(p, self.log_sigma))));
        for i in (0..n).rev() {
            z = Self::reflect(&ops, &z, &self.vector(&ops, &all, i));
        }
        z.into_owned()
    }

    pub fn logdet(&self, p: &ParamStore) -> f64 {
        p.slice(self.log_sigma).iter().sum()
    }

    /// The orthogonal factors `(U, V)` for a single embedding row.
    pub fn factors(&self, p: &ParamStore, emb: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let e = Array2::from_shape_vec((1, emb.len()), emb.to_vec())
            .map_err(|err| Error::Shape(err.to_string()))?
            .into_shared();
        let all = self.vectors(&Eager, p, &e);
        let n = self.reflections;
        let d = self.dim;
        let get = |i: usize| -> Vec<f64> { (0..d).map(|j| all[[0, i * d + j]]).collect() };
        let v: Vec<Vec<f64>> = (0..n).map(get).collect();
        let u: Vec<Vec<f64>> = (n..2 * n).map(get).collect();
        Ok((householder_orthogonal(&u, d)?, householder_orthogonal(&v, d)?))
    }
}
