//! The Lagrangian field: density, velocity and flow map derived from one
//! time-conditioned bijection.
//!
//! With `Φ_t` the bijection and `c` the total mass,
//!
//! * `log ρ̂(t, x) = log c + log N(Φ_t(x); 0, I) + log |det ∂Φ_t/∂x|`,
//! * `v̂(t, x)` solves `∂Φ_t/∂x · v̂ = −∂Φ_t/∂t`,
//! * `X̂(t_from → t_to)(x) = Φ_{t_to}⁻¹(Φ_{t_from}(x))`,
//!
//! so the pair `(ρ̂, v̂)` satisfies the continuity equation exactly.

use ndarray::Array2;
use rand::Rng;

use crate::bijection::{ArchitectureConfig, BijectionStack, ConditionalBijection, DomainBox};
use crate::diffcore::{linalg, Eager, Fwd, Ops, ParamStore, Slot};
use crate::error::{Error, Result};

/// Condition number above which a Jacobian counts as singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Outputs of one batched field evaluation.
#[derive(Debug, Clone)]
pub struct FieldOutputs<T> {
    /// `rows × 1`.
    pub log_density: T,
    /// `d` columns of `rows × 1`, when requested.
    pub velocity: Option<Vec<T>>,
    /// Row-major `d²` Jacobian entries of `Φ_t`, each `rows × 1` or `1 × 1`.
    pub jacobian: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianField<M = BijectionStack> {
    map: M,
    params: ParamStore,
    log_mass: Slot,
    domain: DomainBox,
    time_range: (f64, f64),
}

pub(crate) fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

pub(crate) fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

fn unit(d: usize, j: usize) -> Array2<f64> {
    let mut e = Array2::zeros((1, d));
    e[[0, j]] = 1.0;
    e
}

fn tangent_col<O: Ops>(ops: &O, tan: &Option<O::T>, i: usize) -> O::T {
    match tan {
        Some(t) if ops.shape(t).1 == 1 => t.clone(),
        Some(t) => ops.col(t, i),
        None => ops.scalar(0.0),
    }
}

fn column(a: &Array2<f64>, rows: usize) -> Vec<f64> {
    (0..rows).map(|r| a[[if a.nrows() == 1 { 0 } else { r }, 0]]).collect()
}

impl LagrangianField<BijectionStack> {
    /// A freshly initialised field over `domain` with `log c = log_mass`.
    pub fn new(
        arch: &ArchitectureConfig,
        domain: DomainBox,
        time_range: (f64, f64),
        log_mass: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let slot = params.add("log_total_mass", 1, 1, vec![log_mass]);
        let stack = BijectionStack::new(arch, &domain, &mut params, rng)?;
        Self::from_parts(stack, params, slot, domain, time_range)
    }

    pub fn stack(&self) -> &BijectionStack {
        &self.map
    }

    pub fn stack_mut(&mut self) -> &mut BijectionStack {
        &mut self.map
    }

    /// Re-applies the Lipschitz clamp to every residual block.
    pub fn spectral_normalize(&mut self, iters: usize) {
        self.map.spectral_normalize(&mut self.params, iters);
    }
}

impl<M: ConditionalBijection> LagrangianField<M> {
    pub fn from_parts(map: M, params: ParamStore, log_mass: Slot, domain: DomainBox, time_range: (f64, f64)) -> Result<Self> {
        if map.dim() != domain.dim() {
            return Err(Error::invalid("bijection and domain dimensions differ"));
        }
        if !(time_range.0 < time_range.1) {
            return Err(Error::invalid("time range must be increasing"));
        }
        Ok(Self {
            map,
            params,
            log_mass,
            domain,
            time_range,
        })
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn map(&self) -> &M {
        &self.map
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn log_mass_slot(&self) -> Slot {
        self.log_mass
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn time_range(&self) -> (f64, f64) {
        self.time_range
    }

    pub fn total_mass(&self) -> f64 {
        self.params.scalar(self.log_mass).exp()
    }

    /// Density (and optionally velocity) under any interpreter. `t` is
    /// `rows × 1` or `1 × 1`; `x` is `rows × d`.
    pub fn evaluate<O: Ops>(&self, ops: &O, p: &ParamStore, t: &O::T, x: &O::T, with_velocity: bool) -> FieldOutputs<O::T> {
        let d = self.dim();
        let dirs = if with_velocity { d + 1 } else { d };
        let f = Fwd::new(ops, dirs);
        let mut xin = f.lift(x.clone());
        for j in 0..d {
            xin.tangents[j] = Some(ops.constant(unit(d, j)));
        }
        let mut tin = f.lift(t.clone());
        if with_velocity {
            tin.tangents[d] = Some(ops.scalar(1.0));
        }
        let y = self.map.transform(&f, p, &tin, &xin);
        let jacobian: Vec<O::T> = (0..d * d).map(|k| tangent_col(ops, &y.tangents[k % d], k / d)).collect();
        let logdet = ops.log_abs_det(&jacobian);
        let sq = ops.sum_cols(&ops.square(&y.value));
        let log_base = ops.add_scalar(&ops.scale(&sq, -0.5), -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln());
        let log_density = ops.add(&ops.add(&log_base, &logdet), &ops.param(p, self.log_mass));
        let velocity = with_velocity.then(|| {
            let rhs: Vec<O::T> = (0..d).map(|i| ops.neg(&tangent_col(ops, &y.tangents[d], i))).collect();
            ops.solve(&jacobian, &rhs)
        });
        FieldOutputs {
            log_density,
            velocity,
            jacobian,
        }
    }

    fn check_points(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!("expected {} columns, got {}", self.dim(), x.ncols())));
        }
        for r in x.rows() {
            self.domain.check(&r.to_vec())?;
        }
        Ok(())
    }

    fn check_conditioning(&self, jac: &[ndarray::ArcArray2<f64>], rows: usize) -> Result<()> {
        let d = self.dim();
        for r in 0..rows {
            let m: Vec<f64> = jac.iter().map(|c| c[[if c.nrows() == 1 { 0 } else { r }, 0]]).collect();
            let cond = linalg::cond1(&m, d);
            if !(cond <= SINGULAR_COND) {
                return Err(Error::Singular { cond });
            }
        }
        Ok(())
    }

    /// `log ρ̂` at each row of `x`; `t` is `rows × 1` or `1 × 1`.
    pub fn log_density_batch(&self, t: &Array2<f64>, x: &Array2<f64>) -> Result<Vec<f64>> {
        self.check_points(x)?;
        let out = self.evaluate(&Eager, &self.params, &t.clone().into_shared(), &x.clone().into_shared(), false);
        let v = column(&out.log_density.to_owned(), x.nrows());
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFiniteValue { what: "log density" });
        }
        Ok(v)
    }

    /// `(log ρ̂, v̂)` at each row; velocities as a `rows × d` array.
    pub fn log_density_velocity_batch(&self, t: &Array2<f64>, x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        self.check_points(x)?;
        let rows = x.nrows();
        let out = self.evaluate(&Eager, &self.params, &t.clone().into_shared(), &x.clone().into_shared(), true);
        self.check_conditioning(&out.jacobian, rows)?;
        let vel = out.velocity.expect("velocity requested");
        let mut v = Array2::zeros((rows, self.dim()));
        for (i, c) in vel.iter().enumerate() {
            for (r, val) in column(&c.to_owned(), rows).into_iter().enumerate() {
                v[[r, i]] = val;
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { what: "velocity" });
        }
        Ok((column(&out.log_density.to_owned(), rows), v))
    }

    pub fn velocity_batch(&self, t: &Array2<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.log_density_velocity_batch(t, x)?.1)
    }

    /// Velocity and its divergence `∇·v̂` at each row for a shared time `t`.
    pub fn velocity_divergence_batch(&self, t: f64, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check_points(x)?;
        let d = self.dim();
        let rows = x.nrows();
        let e = Eager;
        let outer = Fwd::new(&e, d);
        let mut xin = outer.lift(x.clone().into_shared());
        for j in 0..d {
            xin.tangents[j] = Some(e.constant(unit(d, j)));
        }
        let tin = outer.lift(e.constant(scalar(t)));
        let out = self.evaluate(&outer, &self.params, &tin, &xin, true);
        let jac: Vec<ndarray::ArcArray2<f64>> = out.jacobian.iter().map(|j| j.value.clone()).collect();
        self.check_conditioning(&jac, rows)?;
        let vel = out.velocity.expect("velocity requested");
        let mut v = Array2::zeros((rows, d));
        let mut div = vec![0.0; rows];
        for (i, c) in vel.iter().enumerate() {
            for (r, val) in column(&c.value.to_owned(), rows).into_iter().enumerate() {
                v[[r, i]] = val;
            }
            if let Some(tan) = &c.tangents[i] {
                let tan = tan.to_owned();
                for (r, acc) in div.iter_mut().enumerate() {
                    *acc += tan[[if tan.nrows() == 1 { 0 } else { r }, 0]];
                }
            }
        }
        if v.iter().chain(div.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { what: "velocity divergence" });
        }
        Ok((v, div))
    }

    pub fn log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.log_density_batch(&scalar(t), &row(x))?[0])
    }

    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(t, x)?.exp())
    }

    pub fn velocity(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.velocity_batch(&scalar(t), &row(x))?.row(0).to_vec())
    }

    /// `ρ̂ v̂`.
    pub fn flux(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let (ld, v) = self.log_density_velocity_batch(&scalar(t), &row(x))?;
        let rho = ld[0].exp();
        Ok(v.row(0).iter().map(|vi| rho * vi).collect())
    }

    /// `Φ_{t_to}⁻¹(Φ_{t_from}(x))` for every row of `x`.
    pub fn flow_map_batch(&self, t_from: f64, t_to: f64, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_points(x)?;
        if t_from == t_to {
            return Ok(x.clone());
        }
        let y = self.map.transform(&Eager, &self.params, &scalar(t_from).into_shared(), &x.clone().into_shared());
        self.map.inverse_transform(&self.params, &scalar(t_to), &y.to_owned())
    }

    pub fn flow_map(&self, t_from: f64, t_to: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.flow_map_batch(t_from, t_to, &row(x))?.row(0).to_vec())
    }

    /// Positions `X̂(times[0] → τ)(x0)` for each `τ` in `times`.
    pub fn trajectory(&self, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let Some(&start) = times.first() else {
            return Ok(Vec::new());
        };
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("trajectory times must be sorted"));
        }
        times.iter().map(|&tau| self.flow_map(start, tau, x0)).collect()
    }

    /// Central-difference estimate of `∂_t ρ̂ + ∇·(ρ̂ v̂)` with step `h`.
    pub fn ce_residual(&self, t: f64, x: &[f64], h: f64) -> Result<f64> {
        let d = self.dim();
        let dt = (self.density(t + h, x)? - self.density(t - h, x)?) / (2.0 * h);
        let mut shifted = Array2::zeros((2 * d, d));
        for i in 0..d {
            for j in 0..d {
                shifted[[2 * i, j]] = x[j];
                shifted[[2 * i + 1, j]] = x[j];
            }
            shifted[[2 * i, i]] += h;
            shifted[[2 * i + 1, i]] -= h;
        }
        let (ld, v) = self.log_density_velocity_batch(&scalar(t), &shifted)?;
        let div: f64 = (0..d)
            .map(|i| (ld[2 * i].exp() * v[[2 * i, i]] - ld[2 * i + 1].exp() * v[[2 * i + 1, i]]) / (2.0 * h))
            .sum();
        Ok(dt + div)
    }
}
