use ndarray::{ArcArray2, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Eager, Ops, ParamStore, Slot};
use crate::error::{Error, Result};

/// Conditional i-DenseNet block `g(x) = x + h(x, e)` with `Lip_x(h) ≤ γ < 1`.
///
/// `h` starts from `z₀ = (x, e)` and applies `depth` densely connected layers
/// `z ← (η z, s(W z + b) / √2)` with `s(u) = sin(ωu)/ω`, followed by a linear
/// read-out to `d` outputs. Every weight matrix is clamped to spectral norm
/// `γ^{1/(depth+1)}` and the carried features use `η = γ^{1/(depth+1)}/√2`,
/// so each concatenation stage contracts by the same per-matrix budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    dim: usize,
    depth: usize,
    omega: f64,
    lipschitz: f64,
    dense: Vec<(Slot, Slot)>,
    w_out: Slot,
    b_out: Slot,
    /// Warm-started right singular vector estimates, one per weight matrix.
    power: Vec<Vec<f64>>,
}

/// Tolerance and iteration cap of the fixed-point inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200 }
    }
}

fn uniform(rng: &mut impl Rng, bound: f64, n: usize) -> Vec<f64> {
    let u = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    (0..n).map(|_| u.sample(rng)).collect()
}

fn unit_vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Power-iteration estimate of the largest singular value of the row-major
/// `rows × cols` matrix `w`, refining the right singular vector `v` in place.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize, v: &mut [f64], iters: usize) -> f64 {
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..iters {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = (0..cols).map(|j| w[i * cols + j] * v[j]).sum();
        }
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu == 0.0 {
            return 0.0;
        }
        u.iter_mut().for_each(|x| *x /= nu);
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = (0..rows).map(|i| w[i * cols + j] * u[i]).sum();
        }
        sigma = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= sigma);
    }
    sigma
}

/// Rescales `w` to `w · min(1, budget / σ̂)` and returns the estimate `σ̂`.
pub fn spectral_normalize_matrix(w: &mut [f64], rows: usize, cols: usize, v: &mut [f64], budget: f64, iters: usize) -> f64 {
    let sigma = power_iteration(w, rows, cols, v, iters.max(1));
    if sigma > budget {
        let f = budget / sigma;
        w.iter_mut().for_each(|x| *x *= f);
    }
    sigma
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        dim: usize,
        embed_dim: usize,
        depth: usize,
        width: usize,
        omega: f64,
        lipschitz: f64,
        params: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dense = Vec::with_capacity(depth);
        let mut power = Vec::with_capacity(depth + 1);
        let mut fan_in = dim + embed_dim;
        for l in 0..depth {
            let bound = (6.0 / fan_in as f64).sqrt() / omega;
            let w = params.add(format!("{name}.dense{l}.w"), fan_in, width, uniform(rng, bound, fan_in * width));
            let b = params.add(format!("{name}.dense{l}.b"), 1, width, uniform(rng, 1.0 / omega, width));
            dense.push((w, b));
            power.push(unit_vector(rng, width));
            fan_in += width;
        }
        let bound = (6.0 / fan_in as f64).sqrt() / omega;
        let w_out = params.add(format!("{name}.out.w"), fan_in, dim, uniform(rng, bound, fan_in * dim));
        let b_out = params.add(format!("{name}.out.b"), 1, dim, vec![0.0; dim]);
        power.push(unit_vector(rng, dim));
        Self {
            dim,
            depth,
            omega,
            lipschitz,
            dense,
            w_out,
            b_out,
            power,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Per-matrix spectral budget `γ^{1/(depth+1)}`.
    pub fn matrix_budget(&self) -> f64 {
        self.lipschitz.powf(1.0 / (self.depth + 1) as f64)
    }

    pub fn weight_slots(&self) -> Vec<Slot> {
        self.dense.iter().map(|(w, _)| *w).chain(std::iter::once(self.w_out)).collect()
    }

    pub fn bias_slots(&self) -> Vec<Slot> {
        self.dense.iter().map(|(_, b)| *b).chain(std::iter::once(self.b_out)).collect()
    }

    pub fn power_vectors(&self) -> &[Vec<f64>] {
        &self.power
    }

    pub fn set_power_vectors(&mut self, vectors: Vec<Vec<f64>>) -> Result<()> {
        if vectors.len() != self.power.len() || vectors.iter().zip(&self.power).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid("power-iteration vectors do not match the block"));
        }
        self.power = vectors;
        Ok(())
    }

    /// The residual `h(x, e)`; `e` has one row or as many rows as `x`.
    pub fn residual<O: Ops>(&self, ops: &O, p: &ParamStore, x: &O::T, emb: &O::T) -> O::T {
        let eta = self.matrix_budget() / std::f64::consts::SQRT_2;
        let mut z = ops.concat_cols(&[x.clone(), emb.clone()]);
        for (w, b) in &self.dense {
            let pre = ops.add(&ops.matmul(&z, &ops.param(p, *w)), &ops.param(p, *b));
            let a = ops.sine_act(&pre, self.omega);
            z = ops.concat_cols(&[ops.scale(&z, eta), ops.scale(&a, std::f64::consts::FRAC_1_SQRT_2)]);
        }
        ops.add(&ops.matmul(&z, &ops.param(p, self.w_out)), &ops.param(p, self.b_out))
    }

    pub fn forward<O: Ops>(&self, ops: &O, p: &ParamStore, x: &O::T, emb: &O::T) -> O::T {
        ops.add(x, &self.residual(ops, p, x, emb))
    }

    /// Banach fixed-point inversion `x ← y − h(x, e)` from `x₀ = y`.
    pub fn inverse(&self, p: &ParamStore, y: &Array2<f64>, emb: &ArcArray2<f64>, opts: InverseOptions) -> Result<Array2<f64>> {
        let yc: ArcArray2<f64> = y.clone().into_shared();
        let mut x = yc.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iter {
            let h = self.residual(&Eager, p, &x, emb);
            let next = &yc - &h;
            residual = (&next - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !residual.is_finite() {
                return Err(Error::NonFiniteValue { what: "fixed-point inversion" });
            }
            x = next.into_shared();
            if residual <= opts.tol {
                return Ok(x.into_owned());
            }
        }
        Err(Error::InversionFailed {
            iters: opts.max_iter,
            residual,
        })
    }

    /// Applies the spectral clamp to every weight matrix, refining the
    /// persistent power-iteration vectors with `iters` steps each.
    pub fn spectral_normalize(&mut self, p: &mut ParamStore, iters: usize) {
        let budget = self.matrix_budget();
        for (k, slot) in self.weight_slots().into_iter().enumerate() {
            let (rows, cols) = {
                let info = p.info(slot);
                (info.rows, info.cols)
            };
            spectral_normalize_matrix(p.slice_mut(slot), rows, cols, &mut self.power[k], budget, iters);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}
