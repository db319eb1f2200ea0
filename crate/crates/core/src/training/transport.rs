use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::bijection::{ConditionalBijection, DomainBox};
use crate::diffcore::{Ops, ParamStore, Unary};
use crate::error::{Error, Result};
use crate::field::LagrangianField;
use crate::ot::Endpoint;

/// Sample sizes of the Monte-Carlo transport objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OtSampling {
    /// Points per endpoint for the density matching terms.
    pub n_space: usize,
    /// Distinct times of the kinetic term.
    pub n_time: usize,
    /// Points per time of the kinetic term.
    pub n_kinetic: usize,
    /// Uniform share of the endpoint sampling mixture.
    pub endpoint_uniform: f64,
}

impl Default for OtSampling {
    fn default() -> Self {
        Self {
            n_space: 256,
            n_time: 8,
            n_kinetic: 64,
            endpoint_uniform: 0.5,
        }
    }
}

impl OtSampling {
    pub fn validate(&self) -> Result<()> {
        if self.n_space == 0 || self.n_time == 0 || self.n_kinetic == 0 {
            return Err(Error::invalid("transport sample counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.endpoint_uniform) {
            return Err(Error::invalid("endpoint_uniform must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One draw of all points entering the transport objective.
#[derive(Debug, Clone, PartialEq)]
pub struct OtBatch {
    pub t0: f64,
    pub t1: f64,
    pub x0: Array2<f64>,
    /// `p₀` at the rows of `x0`.
    pub target0: Array2<f64>,
    pub x1: Array2<f64>,
    pub target1: Array2<f64>,
    pub t_kinetic: Array2<f64>,
    pub x_kinetic: Array2<f64>,
    /// Importance weights `(t₁ − t₀) / q(x)`; draws that fell outside the
    /// domain sit at its center with weight zero.
    pub weight_kinetic: Array2<f64>,
}

fn uniform_point(domain: &DomainBox, rng: &mut ChaCha8Rng) -> Vec<f64> {
    domain.lower.iter().zip(&domain.upper).map(|(a, b)| rng.random_range(*a..*b)).collect()
}

/// A draw from `endpoint` restricted to the open domain.
fn endpoint_point(endpoint: &Endpoint, domain: &DomainBox, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    for _ in 0..10_000 {
        let s = endpoint.sample(1, rng)?;
        let p = s.row(0).to_vec();
        if domain.contains(&p) {
            return Ok(p);
        }
    }
    Err(Error::invalid("endpoint distribution has almost no mass inside the domain"))
}

fn stack(rows: &[Vec<f64>], d: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

fn column(v: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v).expect("column vector")
}

impl OtBatch {
    /// Endpoint points come from `(1−u)·pᵢ + u·Uniform`; kinetic points from
    /// `q(t) q(x)` with `q(t)` uniform on `[t₀, t₁]` and
    /// `q(x) = ⅓ p₀ + ⅓ p₁ + ⅓ Uniform`.
    pub fn sample(
        p0: &Endpoint,
        p1: &Endpoint,
        domain: &DomainBox,
        time: (f64, f64),
        cfg: &OtSampling,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = domain.dim();
        if p0.dim() != d || p1.dim() != d {
            return Err(Error::Shape("endpoint and domain dimensions differ".into()));
        }
        let (t0, t1) = time;
        if !(t1 > t0) {
            return Err(Error::invalid("transport needs t₁ > t₀"));
        }
        let endpoint = |p: &Endpoint, rng: &mut ChaCha8Rng| -> Result<(Array2<f64>, Array2<f64>)> {
            let mut pts = Vec::with_capacity(cfg.n_space);
            for _ in 0..cfg.n_space {
                pts.push(if rng.random::<f64>() < cfg.endpoint_uniform {
                    uniform_point(domain, rng)
                } else {
                    endpoint_point(p, domain, rng)?
                });
            }
            let target = pts.iter().map(|x| p.density(x)).collect();
            Ok((stack(&pts, d), column(target)))
        };
        let (x0, target0) = endpoint(p0, rng)?;
        let (x1, target1) = endpoint(p1, rng)?;
        let vol = domain.volume();
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        for _ in 0..cfg.n_time {
            let t = rng.random_range(t0..t1);
            for _ in 0..cfg.n_kinetic {
                let x = match rng.random_range(0..3) {
                    0 => p0.sample(1, rng)?.row(0).to_vec(),
                    1 => p1.sample(1, rng)?.row(0).to_vec(),
                    _ => uniform_point(domain, rng),
                };
                ts.push(t);
                if domain.contains(&x) {
                    let q = (p0.density(&x) + p1.density(&x) + 1.0 / vol) / 3.0;
                    ws.push((t1 - t0) / q);
                    xs.push(x);
                } else {
                    ws.push(0.0);
                    xs.push(domain.center());
                }
            }
        }
        Ok(Self {
            t0,
            t1,
            x0,
            target0,
            x1,
            target1,
            t_kinetic: column(ts),
            x_kinetic: stack(&xs, d),
            weight_kinetic: column(ws),
        })
    }
}

/// Values of the transport objective terms, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OtParts {
    pub endpoint0: f64,
    pub endpoint1: f64,
    pub kinetic: f64,
    pub total: f64,
}

/// `λ·E|ρ̂(t₀)−p₀| + λ·E|ρ̂(t₁)−p₁| + κ·E_q[|v̂|² ρ̂ / q]` plus the mass penalty.
pub fn ot_objective<O: Ops, M: ConditionalBijection>(
    ops: &O,
    field: &LagrangianField<M>,
    p: &ParamStore,
    batch: &OtBatch,
    weights: &LossWeights,
    value: impl Fn(&O::T) -> f64,
) -> (O::T, OtParts) {
    let mut parts = OtParts::default();
    let mut total = super::losses::mass_penalty(ops, field, p, weights.mass);
    let endpoint = |t: f64, x: &Array2<f64>, target: &Array2<f64>| -> O::T {
        let out = field.evaluate(ops, p, &ops.scalar(t), &ops.constant(x.clone()), false);
        let diff = ops.sub(&ops.exp(&out.log_density), &ops.constant(target.clone()));
        ops.mean_all(&ops.unary(&diff, Unary::Abs))
    };
    if weights.ot_endpoint > 0.0 {
        let e0 = endpoint(batch.t0, &batch.x0, &batch.target0);
        let e1 = endpoint(batch.t1, &batch.x1, &batch.target1);
        parts.endpoint0 = value(&e0);
        parts.endpoint1 = value(&e1);
        total = ops.add(&total, &ops.scale(&ops.add(&e0, &e1), weights.ot_endpoint));
    }
    if weights.ot_kinetic > 0.0 {
        let t = ops.constant(batch.t_kinetic.clone());
        let x = ops.constant(batch.x_kinetic.clone());
        let out = field.evaluate(ops, p, &t, &x, true);
        let v = out.velocity.expect("velocity requested");
        let speed = v.iter().map(|c| ops.square(c)).reduce(|a, b| ops.add(&a, &b)).expect("non-empty velocity");
        let integrand = ops.mul(&ops.mul(&speed, &ops.exp(&out.log_density)), &ops.constant(batch.weight_kinetic.clone()));
        let k = ops.mean_all(&integrand);
        parts.kinetic = value(&k);
        total = ops.add(&total, &ops.scale(&k, weights.ot_kinetic));
    }
    parts.total = value(&total);
    (total, parts)
}
