//! Adaptive Dormand–Prince integrators and the log-density transport ODE.

mod density;
mod tableau;

pub use density::{ode_density, ode_density_batch, OdeDensityBatch, TransportModel, VelocityOffset};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tableau::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dormand–Prince 5(4).
    Dp5,
    /// Dormand–Prince 8(5,3).
    Dp8,
}

impl Method {
    pub fn order(self) -> usize {
        match self {
            Method::Dp5 => 5,
            Method::Dp8 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// First step size; chosen automatically when zero.
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Dp8,
            rtol: 1e-5,
            atol: 1e-5,
            initial_step: 0.0,
            max_steps: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) || self.max_steps == 0 || !(self.initial_step >= 0.0) {
            return Err(Error::invalid("solver tolerances and max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeResult {
    pub t: f64,
    pub y: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const BETA: f64 = 0.04;

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(rhs: F, y0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<OdeResult>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    integrate_grouped(rhs, y0, t0, t1, cfg, y0.len().max(1))
}

/// Like [`integrate`], but the error norm is the maximum over consecutive
/// blocks of `group` components of each block's RMS norm, so that a batch of
/// independent systems is controlled as if each were integrated alone.
pub fn integrate_grouped<F>(mut rhs: F, y0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig, group: usize) -> Result<OdeResult>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    let n = y0.len();
    if group == 0 || n % group != 0 {
        return Err(Error::invalid("state length must be a multiple of the group size"));
    }
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::invalid("integration bounds must be finite"));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    // Integrate in s = dir·t so the controller always steps forward.
    let mut f = |s: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        rhs(dir * s, y, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { what: "ode right-hand side" });
        }
        if dir < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(())
    };
    let (s0, s1) = (dir * t0, dir * t1);
    let mut res = OdeResult {
        t: t0,
        y: y0.to_vec(),
        accepted: 0,
        rejected: 0,
        evaluations: 0,
    };
    if n == 0 || s1 == s0 {
        res.t = t1;
        return Ok(res);
    }
    let mut stepper = Stepper::new(cfg.method, n, group);
    let mut k1 = vec![0.0; n];
    f(s0, &res.y, &mut k1)?;
    res.evaluations += 1;
    let span = s1 - s0;
    let mut h = if cfg.initial_step > 0.0 {
        cfg.initial_step
    } else {
        let (h, evals) = initial_step(&mut f, s0, &res.y, &k1, cfg, span)?;
        res.evaluations += evals;
        h
    }
    .min(span);
    let mut s = s0;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let expo = 1.0 / (cfg.method.order() as f64) - 0.75 * BETA;
    let mut steps = 0usize;
    while s < s1 {
        if steps >= cfg.max_steps {
            return Err(Error::MaxSteps {
                max_steps: cfg.max_steps,
                t: dir * s,
                state: res.y.clone(),
            });
        }
        steps += 1;
        if h <= 1e-14 * s.abs().max(span.abs()) {
            return Err(Error::StepSizeUnderflow { t: dir * s });
        }
        let last = s + h >= s1 || (s1 - (s + h)) <= 1e-12 * span;
        let hh = if last { s1 - s } else { h };
        let err = stepper.step(&mut f, s, &res.y, &k1, hh, cfg)?;
        res.evaluations += stepper.stage_evals();
        let fac11 = err.powf(expo);
        let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / MAX_FACTOR, 1.0 / MIN_FACTOR);
        let mut h_new = hh / fac;
        if err <= 1.0 {
            facold = err.max(1e-4);
            res.accepted += 1;
            s = if last { s1 } else { s + hh };
            res.y.copy_from_slice(&stepper.y_new);
            if let Some(next) = stepper.fsal() {
                k1.copy_from_slice(next);
            } else {
                f(s, &res.y, &mut k1)?;
                res.evaluations += 1;
            }
            if last_rejected {
                h_new = h_new.min(hh);
            }
            last_rejected = false;
        } else {
            h_new = hh / (fac11 / SAFETY).min(1.0 / MIN_FACTOR);
            res.rejected += 1;
            last_rejected = true;
        }
        h = h_new;
    }
    res.t = t1;
    Ok(res)
}

/// Starting step from the size of the solution and its first two derivatives.
fn initial_step<F>(f: &mut F, s0: f64, y0: &[f64], f0: &[f64], cfg: &SolverConfig, span: f64) -> Result<(f64, usize)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len() as f64;
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let norm = |v: &[f64]| (v.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt();
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, k)| y + h0 * k).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(s0 + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let m = d1.max(d2);
    // A vanishing derivative gives no length scale; let the error test decide.
    let h = if m <= 1e-15 {
        span
    } else {
        (100.0 * h0).min((0.01 / m).powf(1.0 / (cfg.method.order() as f64 + 1.0)))
    };
    Ok((h.min(span), 1))
}

struct Stepper {
    method: Method,
    group: usize,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stepper {
    fn new(method: Method, n: usize, group: usize) -> Self {
        let stages = match method {
            Method::Dp5 => 7,
            Method::Dp8 => 12,
        };
        Self {
            method,
            group,
            k: vec![vec![0.0; n]; stages],
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }

    fn stage_evals(&self) -> usize {
        self.k.len() - 1
    }

    /// Derivative at the new point when the scheme provides it for free.
    fn fsal(&self) -> Option<&[f64]> {
        match self.method {
            Method::Dp5 => Some(&self.k[6]),
            Method::Dp8 => None,
        }
    }

    fn stages<F>(&mut self, f: &mut F, s: f64, y: &[f64], k1: &[f64], h: f64, a: &[&[f64]], c: &[f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        self.k[0].copy_from_slice(k1);
        for i in 1..a.len() {
            for (idx, t) in self.tmp.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, aij) in a[i].iter().enumerate() {
                    if *aij != 0.0 {
                        acc += aij * self.k[j][idx];
                    }
                }
                *t = y[idx] + h * acc;
            }
            let (_, rest) = self.k.split_at_mut(i);
            f(s + c[i] * h, &self.tmp, &mut rest[0])?;
        }
        Ok(())
    }

    /// One trial step; returns the scaled error norm (accept when ≤ 1).
    fn step<F>(&mut self, f: &mut F, s: f64, y: &[f64], k1: &[f64], h: f64, cfg: &SolverConfig) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        match self.method {
            Method::Dp5 => {
                self.stages(f, s, y, k1, h, &DP5_A, &DP5_C)?;
                for idx in 0..n {
                    let incr: f64 = (0..7).map(|j| DP5_B[j] * self.k[j][idx]).sum();
                    self.y_new[idx] = y[idx] + h * incr;
                }
                let mut worst: f64 = 0.0;
                for g in (0..n).step_by(self.group) {
                    let mut acc = 0.0;
                    for idx in g..g + self.group {
                        let e: f64 = h * (0..7).map(|j| DP5_E[j] * self.k[j][idx]).sum::<f64>();
                        let sk = cfg.atol + cfg.rtol * y[idx].abs().max(self.y_new[idx].abs());
                        acc += (e / sk).powi(2);
                    }
                    worst = worst.max((acc / self.group as f64).sqrt());
                }
                Ok(worst)
            }
            Method::Dp8 => {
                self.stages(f, s, y, k1, h, &DOP853_A, &DOP853_C)?;
                let mut worst: f64 = 0.0;
                for g in (0..n).step_by(self.group) {
                    let mut err5 = 0.0;
                    let mut err3 = 0.0;
                    for idx in g..g + self.group {
                        let slope: f64 = (0..12).map(|j| DOP853_B[j] * self.k[j][idx]).sum();
                        self.y_new[idx] = y[idx] + h * slope;
                        let sk = cfg.atol + cfg.rtol * y[idx].abs().max(self.y_new[idx].abs());
                        let e3 = slope
                            - DOP853_BHH[0] * self.k[0][idx]
                            - DOP853_BHH[1] * self.k[8][idx]
                            - DOP853_BHH[2] * self.k[11][idx];
                        let e5: f64 = (0..12).map(|j| DOP853_E5[j] * self.k[j][idx]).sum();
                        err3 += (e3 / sk).powi(2);
                        err5 += (e5 / sk).powi(2);
                    }
                    let mut deno = err5 + 0.01 * err3;
                    if deno <= 0.0 {
                        deno = 1.0;
                    }
                    worst = worst.max(h.abs() * err5 / (deno * self.group as f64).sqrt());
                }
                Ok(worst)
            }
        }
    }
}

/// Fixed-step solution of `y' = rhs(t, y)` on `[0, t1]` with `steps` steps.
pub fn fixed_step<F>(method: Method, mut rhs: F, y0: &[f64], t1: f64, steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut stepper = Stepper::new(method, n, n.max(1));
    let cfg = SolverConfig::default();
    let h = t1 / steps as f64;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    for i in 0..steps {
        let s = i as f64 * h;
        rhs(s, &y, &mut k1)?;
        stepper.step(&mut rhs, s, &y, &k1, h, &cfg)?;
        y.copy_from_slice(&stepper.y_new);
    }
    Ok(y)
}

/// `log₂(e(h) / e(h/2))` for fixed-step runs with `steps` and `2·steps` steps;
/// `None` when the coarse error is already at roundoff level.
pub fn empirical_order<F>(method: Method, rhs: F, y0: &[f64], exact: &[f64], t1: f64, steps: usize) -> Result<Option<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()> + Clone,
{
    let err = |y: Vec<f64>| y.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let coarse = err(fixed_step(method, rhs.clone(), y0, t1, steps)?);
    let fine = err(fixed_step(method, rhs, y0, t1, 2 * steps)?);
    if coarse <= 1e-13 || fine == 0.0 {
        return Ok(None);
    }
    Ok(Some((coarse / fine).log2()))
}

/// Empirical convergence order on `y' = y`, `y(0) = 1`, over `[0, 1]`.
pub fn order_check(method: Method) -> Result<f64> {
    let steps = match method {
        Method::Dp5 => 8,
        Method::Dp8 => 4,
    };
    let rhs = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        out[0] = y[0];
        Ok(())
    };
    empirical_order(method, rhs, &[1.0], &[std::f64::consts::E], 1.0, steps)?
        .ok_or_else(|| Error::invalid("errors at roundoff level; order undetermined"))
}
