//! Accuracy and physical-consistency metrics.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odesolve::{ode_density_batch, SolverConfig, TransportModel};
use crate::synthdata::{FluidConfig, FluidGroundTruth};

/// Symmetric absolute percentage error of one pair; `0/0` counts as `0`.
pub fn smape_pair(a: f64, b: f64) -> f64 {
    let den = a.abs() + b.abs();
    if den == 0.0 {
        0.0
    } else {
        (a - b).abs() / den
    }
}

/// Mean of `|a−b| / (|a|+|b|)` over pairs.
pub fn smape(model: &[f64], ode: &[f64]) -> Result<f64> {
    if model.len() != ode.len() {
        return Err(Error::Shape(format!("{} vs {} values", model.len(), ode.len())));
    }
    if model.is_empty() {
        return Err(Error::invalid("no values"));
    }
    Ok(model.iter().zip(ode).map(|(a, b)| smape_pair(*a, *b)).sum::<f64>() / model.len() as f64)
}

pub fn mse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::Shape(format!("{} vs {} values", pred.len(), obs.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("no values"));
    }
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Explained variance `1 − MSE(obs, pred) / Var(obs)`.
pub fn r2(pred: &[f64], obs: &[f64]) -> Result<f64> {
    let err = mse(pred, obs)?;
    let var = variance(obs);
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 - err / var)
}

/// How evaluation points are chosen at each protocol time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSelection {
    /// Uniform draws kept where the ground-truth density exceeds `threshold`.
    GroundTruth {
        #[serde(default)]
        fluid: FluidConfig,
        threshold: f64,
    },
    /// An equidistant `side × side` lattice over the first two axes, with
    /// uniform random remaining coordinates.
    Grid { side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyProtocol {
    pub times: Vec<f64>,
    /// Points per time for ground-truth selection.
    pub points: usize,
    pub selection: PointSelection,
    /// Reference time of the transported density; the field's start when absent.
    pub t_ref: Option<f64>,
    pub solver: SolverConfig,
    /// Points integrated together in one batched solve.
    pub chunk: usize,
    pub seed: u64,
}

impl Default for ConsistencyProtocol {
    fn default() -> Self {
        Self::synthetic(2)
    }
}

impl ConsistencyProtocol {
    /// Ten equidistant times in `[0.1, 1.2]` and 2500 points above the
    /// ground-truth threshold (0.1 in 2D, 0.01 in 3D).
    pub fn synthetic(dim: usize) -> Self {
        Self {
            times: (0..10).map(|k| 0.1 + 1.1 * k as f64 / 9.0).collect(),
            points: 2500,
            selection: PointSelection::GroundTruth {
                fluid: FluidConfig {
                    dim,
                    ..FluidConfig::default()
                },
                threshold: if dim == 2 { 0.1 } else { 0.01 },
            },
            t_ref: None,
            solver: SolverConfig::default(),
            chunk: 250,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.points == 0 || self.chunk == 0 {
            return Err(Error::invalid("protocol needs times, points and a positive chunk size"));
        }
        if let PointSelection::Grid { side: 0 } = self.selection {
            return Err(Error::invalid("grid side must be positive"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeConsistency {
    pub t: f64,
    pub smape: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub smape: f64,
    pub per_time: Vec<TimeConsistency>,
    pub evaluated: usize,
    /// Points whose characteristic left the domain or whose solve failed.
    pub excluded: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
}

impl ConsistencyReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "smape", "evaluated", "excluded"])?;
        for r in &self.per_time {
            wr.write_record([r.t.to_string(), r.smape.to_string(), r.evaluated.to_string(), r.excluded.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn select_points<F: TransportModel + ?Sized>(
    field: &F,
    protocol: &ConsistencyProtocol,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let domain = field.domain();
    let d = field.dim();
    let uniform = |rng: &mut ChaCha8Rng, j: usize| rng.random_range(domain.lower[j]..domain.upper[j]);
    match &protocol.selection {
        PointSelection::GroundTruth { fluid, threshold } => {
            let gt = FluidGroundTruth::new(fluid.clone())?;
            if gt.dim() != d {
                return Err(Error::Shape("ground truth and field dimensions differ".into()));
            }
            let mut pts = Vec::with_capacity(protocol.points * d);
            let mut attempts = 0usize;
            while pts.len() < protocol.points * d {
                attempts += 1;
                if attempts > 10_000 * protocol.points {
                    return Err(Error::invalid("too few locations above the density threshold"));
                }
                let x: Vec<f64> = (0..d).map(|j| uniform(rng, j)).collect();
                if gt.density(t, &x).is_ok_and(|r| r > *threshold) {
                    pts.extend(x);
                }
            }
            Ok(Array2::from_shape_vec((protocol.points, d), pts).expect("point count"))
        }
        PointSelection::Grid { side } => {
            let n = side * side;
            let mut out = Array2::zeros((n, d));
            for a in 0..*side {
                for b in 0..*side {
                    let r = a * side + b;
                    for (j, k) in [(0, a), (1, b)] {
                        let w = domain.upper[j] - domain.lower[j];
                        out[[r, j]] = domain.lower[j] + w * (k as f64 + 0.5) / *side as f64;
                    }
                    for j in 2..d {
                        out[[r, j]] = uniform(rng, j);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Compares the field density with the density obtained by transporting
/// `ρ̂(t_ref, ·)` along the field velocity, at every protocol time.
pub fn consistency_eval<F: TransportModel + ?Sized>(
    field: &F,
    protocol: &ConsistencyProtocol,
) -> Result<ConsistencyReport> {
    protocol.validate()?;
    let (t0, t1) = field.time_range();
    let t_ref = protocol.t_ref.unwrap_or(t0);
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let mut per_time = Vec::new();
    let mut all_model = Vec::new();
    let mut all_ode = Vec::new();
    let (mut accepted, mut rejected, mut evaluations, mut excluded) = (0, 0, 0, 0);
    for &t in &protocol.times {
        if t < t0.min(t_ref) - 1e-12 || t > t1.max(t_ref) + 1e-12 {
            log::warn!("protocol time {t} lies outside the field time range {t0}..{t1}");
        }
        let pts = select_points(field, protocol, t, &mut rng)?;
        let model: Vec<f64> = field
            .log_density_batch(&crate::field::scalar(t), &pts)?
            .into_iter()
            .map(f64::exp)
            .collect();
        let (mut m_t, mut o_t, mut ex_t) = (Vec::new(), Vec::new(), 0);
        for start in (0..pts.nrows()).step_by(protocol.chunk) {
            let end = (start + protocol.chunk).min(pts.nrows());
            let chunk = pts.slice(ndarray::s![start..end, ..]).to_owned();
            match ode_density_batch(field, t, &chunk, t_ref, &protocol.solver) {
                Ok(out) => {
                    accepted += out.accepted;
                    rejected += out.rejected;
                    evaluations += out.evaluations;
                    for (i, v) in out.values.iter().enumerate() {
                        match v {
                            Some(v) => {
                                m_t.push(model[start + i]);
                                o_t.push(*v);
                            }
                            None => ex_t += 1,
                        }
                    }
                }
                Err(e) => {
                    log::warn!("consistency solve failed at t = {t}: {e}");
                    ex_t += end - start;
                }
            }
        }
        excluded += ex_t;
        per_time.push(TimeConsistency {
            t,
            smape: if m_t.is_empty() { f64::NAN } else { smape(&m_t, &o_t)? },
            evaluated: m_t.len(),
            excluded: ex_t,
        });
        all_model.extend(m_t);
        all_ode.extend(o_t);
    }
    if all_model.is_empty() {
        return Err(Error::invalid("every evaluation point was excluded"));
    }
    Ok(ConsistencyReport {
        smape: smape(&all_model, &all_ode)?,
        evaluated: all_model.len(),
        per_time,
        excluded,
        accepted_steps: accepted,
        rejected_steps: rejected,
        evaluations,
    })
}
