use ndarray::Array2;

use super::{integrate_grouped, SolverConfig};
use crate::bijection::{ConditionalBijection, DomainBox};
use crate::error::{Error, Result};
use crate::field::LagrangianField;

/// A density with a velocity field that transports it, as seen by the
/// characteristic solver.
pub trait TransportModel {
    fn dim(&self) -> usize;
    fn domain(&self) -> &DomainBox;
    fn time_range(&self) -> (f64, f64);
    fn log_density_batch(&self, t: &Array2<f64>, x: &Array2<f64>) -> Result<Vec<f64>>;
    fn velocity_divergence_batch(&self, t: f64, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)>;
}

impl<M: ConditionalBijection> TransportModel for LagrangianField<M> {
    fn dim(&self) -> usize {
        LagrangianField::dim(self)
    }
    fn domain(&self) -> &DomainBox {
        LagrangianField::domain(self)
    }
    fn time_range(&self) -> (f64, f64) {
        LagrangianField::time_range(self)
    }
    fn log_density_batch(&self, t: &Array2<f64>, x: &Array2<f64>) -> Result<Vec<f64>> {
        LagrangianField::log_density_batch(self, t, x)
    }
    fn velocity_divergence_batch(&self, t: f64, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        LagrangianField::velocity_divergence_batch(self, t, x)
    }
}

/// Adds a constant vector to the velocity of `inner` while keeping its
/// density; a deliberately inconsistent model for negative controls.
pub struct VelocityOffset<'a, F: ?Sized> {
    pub inner: &'a F,
    pub offset: Vec<f64>,
}

impl<F: TransportModel + ?Sized> TransportModel for VelocityOffset<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn domain(&self) -> &DomainBox {
        self.inner.domain()
    }
    fn time_range(&self) -> (f64, f64) {
        self.inner.time_range()
    }
    fn log_density_batch(&self, t: &Array2<f64>, x: &Array2<f64>) -> Result<Vec<f64>> {
        self.inner.log_density_batch(t, x)
    }
    fn velocity_divergence_batch(&self, t: f64, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let (mut v, div) = self.inner.velocity_divergence_batch(t, x)?;
        for mut row in v.rows_mut() {
            for (a, b) in row.iter_mut().zip(&self.offset) {
                *a += b;
            }
        }
        Ok((v, div))
    }
}

/// Densities implied by transporting `ρ̂(t_ref, ·)` along `v̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeDensityBatch {
    /// `None` where the characteristic left the domain.
    pub values: Vec<Option<f64>>,
    pub exited: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// For every row `x` of `points`, integrates the characteristic through
/// `(t, x)` back to `t_ref` together with `ℓ' = −∇·v̂`, and returns
/// `exp(log ρ̂(t_ref, X_ref) − ℓ(t_ref))`.
pub fn ode_density_batch<F: TransportModel + ?Sized>(
    field: &F,
    t: f64,
    points: &Array2<f64>,
    t_ref: f64,
    cfg: &SolverConfig,
) -> Result<OdeDensityBatch> {
    let d = field.dim();
    let rows = points.nrows();
    if points.ncols() != d {
        return Err(Error::Shape(format!("expected {d} columns, got {}", points.ncols())));
    }
    for r in points.rows() {
        field.domain().check(&r.to_vec())?;
    }
    let w = d + 1;
    let mut y0 = vec![0.0; rows * w];
    for r in 0..rows {
        for j in 0..d {
            y0[r * w + j] = points[[r, j]];
        }
    }
    let mut exited = vec![false; rows];
    let rhs = |tau: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut active = Vec::with_capacity(rows);
        for r in 0..rows {
            if exited[r] {
                continue;
            }
            if field.domain().contains(&y[r * w..r * w + d]) {
                active.push(r);
            } else {
                exited[r] = true;
            }
        }
        if active.is_empty() {
            return Ok(());
        }
        let pts = Array2::from_shape_fn((active.len(), d), |(i, j)| y[active[i] * w + j]);
        let (v, div) = field.velocity_divergence_batch(tau, &pts)?;
        for (i, &r) in active.iter().enumerate() {
            for j in 0..d {
                out[r * w + j] = v[[i, j]];
            }
            out[r * w + d] = -div[i];
        }
        Ok(())
    };
    let res = integrate_grouped(rhs, &y0, t, t_ref, cfg, w)?;
    let mut ends = Vec::new();
    let mut idx = Vec::new();
    for r in 0..rows {
        let pos = &res.y[r * w..r * w + d];
        if !exited[r] && field.domain().contains(pos) {
            ends.push(pos.to_vec());
            idx.push(r);
        } else {
            exited[r] = true;
        }
    }
    let mut values = vec![None; rows];
    if !ends.is_empty() {
        let pts = Array2::from_shape_fn((ends.len(), d), |(i, j)| ends[i][j]);
        let log_ref = field.log_density_batch(&crate::field::scalar(t_ref), &pts)?;
        for (i, &r) in idx.iter().enumerate() {
            values[r] = Some((log_ref[i] - res.y[r * w + d]).exp());
        }
    }
    Ok(OdeDensityBatch {
        exited: exited.iter().filter(|e| **e).count(),
        values,
        accepted: res.accepted,
        rejected: res.rejected,
        evaluations: res.evaluations,
    })
}

/// Single-point form of [`ode_density_batch`].
pub fn ode_density<F: TransportModel + ?Sized>(
    field: &F,
    t: f64,
    x: &[f64],
    t_ref: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let out = ode_density_batch(field, t, &crate::field::row(x), t_ref, cfg)?;
    out.values[0].ok_or(Error::ExitedDomain { t })
}
