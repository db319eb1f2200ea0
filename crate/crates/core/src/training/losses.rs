use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bijection::ConditionalBijection;
use crate::diffcore::{Ops, ParamStore, Unary};
use crate::error::{Error, Result};
use crate::field::LagrangianField;
use crate::synthdata::ObservationSet;

/// Transform applied to densities before taking the squared error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    #[default]
    MseLog1p,
    MseLog,
    MseRaw,
}

impl DensityMode {
    /// Applies the transform to an observed density.
    pub fn transform(self, rho: f64) -> Result<f64> {
        match self {
            DensityMode::MseLog1p if rho < 0.0 => Err(Error::invalid(format!("negative density {rho} in log1p mode"))),
            DensityMode::MseLog if rho <= 0.0 => Err(Error::invalid(format!("non-positive density {rho} in log mode"))),
            DensityMode::MseLog1p => Ok(rho.ln_1p()),
            DensityMode::MseLog => Ok(rho.ln()),
            DensityMode::MseRaw => Ok(rho),
        }
    }

    /// Applies the transform to a predicted log-density.
    pub fn transform_log<O: Ops>(self, ops: &O, log_rho: &O::T) -> O::T {
        match self {
            DensityMode::MseLog1p => ops.unary(&ops.exp(log_rho), Unary::Log1p),
            DensityMode::MseLog => log_rho.clone(),
            DensityMode::MseRaw => ops.exp(log_rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub density: f64,
    pub velocity: f64,
    /// Weight `w_c` of the total-mass penalty `w_c · c`.
    pub mass: f64,
    /// Weight of the endpoint density terms of the transport objective.
    pub ot_endpoint: f64,
    /// Weight of the kinetic energy term of the transport objective.
    pub ot_kinetic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            density: 1.0,
            velocity: 1.0,
            mass: 0.0,
            ot_endpoint: 1.0,
            ot_kinetic: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.density, self.velocity, self.mass, self.ot_endpoint, self.ot_kinetic];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Observations packed into masked arrays for batched loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub t: Array2<f64>,
    pub x: Array2<f64>,
    /// Observed densities, zero where missing.
    pub rho: Vec<f64>,
    /// `1` where a density is observed.
    pub rho_mask: Array2<f64>,
    /// Observed velocities, zero where missing.
    pub velocity: Array2<f64>,
    /// `1` where a velocity is observed.
    pub velocity_mask: Array2<f64>,
}

impl DataBatch {
    /// Packs the observations at `rows` (all when `None`).
    pub fn from_observations(set: &ObservationSet, rows: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..set.len()).collect();
                &all
            }
        };
        if rows.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let d = set.dim;
        let n = rows.len();
        let mut b = DataBatch {
            t: Array2::zeros((n, 1)),
            x: Array2::zeros((n, d)),
            rho: vec![0.0; n],
            rho_mask: Array2::zeros((n, 1)),
            velocity: Array2::zeros((n, d)),
            velocity_mask: Array2::zeros((n, 1)),
        };
        for (i, &r) in rows.iter().enumerate() {
            let o = &set.observations[r];
            b.t[[i, 0]] = o.t;
            for j in 0..d {
                b.x[[i, j]] = o.x[j];
            }
            if let Some(rho) = o.rho {
                b.rho[i] = rho;
                b.rho_mask[[i, 0]] = 1.0;
            }
            if let Some(v) = &o.velocity {
                for j in 0..d {
                    b.velocity[[i, j]] = v[j];
                }
                b.velocity_mask[[i, 0]] = 1.0;
            }
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn density_count(&self) -> usize {
        self.rho_mask.iter().filter(|m| **m > 0.0).count()
    }

    pub fn velocity_count(&self) -> usize {
        self.velocity_mask.iter().filter(|m| **m > 0.0).count()
    }
}

/// Mean squared error of transformed densities over the observed rows.
pub fn density_term<O: Ops>(ops: &O, log_density: &O::T, batch: &DataBatch, mode: DensityMode) -> Result<O::T> {
    let count = batch.density_count();
    if count == 0 {
        return Err(Error::invalid("no density observations in batch"));
    }
    let mut target = Array2::zeros((batch.len(), 1));
    for (i, (rho, m)) in batch.rho.iter().zip(batch.rho_mask.iter()).enumerate() {
        if *m > 0.0 {
            target[[i, 0]] = mode.transform(*rho)?;
        }
    }
    let pred = mode.transform_log(ops, log_density);
    let diff = ops.sub(&pred, &ops.constant(target));
    let masked = ops.mul(&ops.square(&diff), &ops.constant(batch.rho_mask.clone()));
    Ok(ops.scale(&ops.sum_all(&masked), 1.0 / count as f64))
}

/// Mean squared error over present velocity components; `None` when the
/// batch carries no velocity.
pub fn velocity_term<O: Ops>(ops: &O, velocity: &[O::T], batch: &DataBatch) -> Option<O::T> {
    let count = batch.velocity_count();
    if count == 0 {
        return None;
    }
    let d = velocity.len();
    let mask = ops.constant(batch.velocity_mask.clone());
    let mut total: Option<O::T> = None;
    for (j, v) in velocity.iter().enumerate() {
        let obs = batch.velocity.column(j).to_owned().insert_axis(ndarray::Axis(1));
        let sq = ops.mul(&ops.square(&ops.sub(v, &ops.constant(obs))), &mask);
        let s = ops.sum_all(&sq);
        total = Some(match total {
            Some(acc) => ops.add(&acc, &s),
            None => s,
        });
    }
    total.map(|t| ops.scale(&t, 1.0 / (count * d) as f64))
}

/// `w_c · c` with `c = exp(log_total_mass)`.
pub fn mass_penalty<O: Ops, M: ConditionalBijection>(ops: &O, field: &LagrangianField<M>, p: &ParamStore, weight: f64) -> O::T {
    ops.scale(&ops.exp(&ops.param(p, field.log_mass_slot())), weight)
}

/// Individual loss values, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub density: f64,
    pub velocity: f64,
    pub mass: f64,
    pub total: f64,
}

/// Density loss of `field` on `batch`.
pub fn density_loss<O: Ops, M: ConditionalBijection>(
    ops: &O,
    field: &LagrangianField<M>,
    p: &ParamStore,
    batch: &DataBatch,
    mode: DensityMode,
) -> Result<O::T> {
    let t = ops.constant(batch.t.clone());
    let x = ops.constant(batch.x.clone());
    let out = field.evaluate(ops, p, &t, &x, false);
    density_term(ops, &out.log_density, batch, mode)
}

/// Velocity loss of `field` on `batch`; zero when the batch has no velocity.
pub fn velocity_loss<O: Ops, M: ConditionalBijection>(ops: &O, field: &LagrangianField<M>, p: &ParamStore, batch: &DataBatch) -> O::T {
    if batch.velocity_count() == 0 {
        log::warn!("velocity loss requested on a batch without velocity observations");
        return ops.scalar(0.0);
    }
    let t = ops.constant(batch.t.clone());
    let x = ops.constant(batch.x.clone());
    let out = field.evaluate(ops, p, &t, &x, true);
    velocity_term(ops, out.velocity.as_deref().unwrap_or(&[]), batch).unwrap_or_else(|| ops.scalar(0.0))
}

/// Weighted sum of the density, velocity and mass terms from a single field
/// evaluation. Returns the total and the per-term values under `value`.
pub fn data_loss<O: Ops, M: ConditionalBijection>(
    ops: &O,
    field: &LagrangianField<M>,
    p: &ParamStore,
    batch: &DataBatch,
    weights: &LossWeights,
    mode: DensityMode,
    value: impl Fn(&O::T) -> f64,
) -> Result<(O::T, LossParts)> {
    let t = ops.constant(batch.t.clone());
    let x = ops.constant(batch.x.clone());
    let use_velocity = weights.velocity > 0.0 && batch.velocity_count() > 0;
    let out = field.evaluate(ops, p, &t, &x, use_velocity);
    let mut parts = LossParts::default();
    let mut total = mass_penalty(ops, field, p, weights.mass);
    parts.mass = value(&total);
    if weights.density > 0.0 && batch.density_count() > 0 {
        let dl = density_term(ops, &out.log_density, batch, mode)?;
        parts.density = value(&dl);
        total = ops.add(&total, &ops.scale(&dl, weights.density));
    }
    if use_velocity {
        if let Some(vl) = velocity_term(ops, out.velocity.as_deref().unwrap_or(&[]), batch) {
            parts.velocity = value(&vl);
            total = ops.add(&total, &ops.scale(&vl, weights.velocity));
        }
    }
    parts.total = value(&total);
    Ok((total, parts))
}
