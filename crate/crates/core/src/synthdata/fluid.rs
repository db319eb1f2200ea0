use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffcore::{DualScalar, Real};
use crate::error::{Error, Result};

/// Parameters of the analytic rotating, scaling and drifting Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidConfig {
    pub dim: usize,
    /// Mixture means in the `xy` plane.
    pub means: Vec<[f64; 2]>,
    pub std: f64,
    /// Rotation speed in turns per unit time.
    pub rotation: f64,
    /// Growth rate of the isotropic scaling `1 + rate·t`.
    pub scale_rate: f64,
    /// Amplitude of the drift `sin(πt)·(a, −a)`.
    pub shift: f64,
    /// Growth rate of the outer factor `(1 + rate·t)/4`.
    pub outer_rate: f64,
}

impl Default for FluidConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            means: vec![[1.5, 0.0], [0.0, 2.5], [-1.5, 0.0], [0.0, -2.5]],
            std: 0.1,
            rotation: 1.0,
            scale_rate: 0.1,
            shift: 0.6,
            outer_rate: 0.5,
        }
    }
}

/// Analytic flow on `(−4, 4)^d` with closed-form flow map, inverse, density
/// and velocity. In 3D the `z` coordinate is carried along unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidGroundTruth {
    cfg: FluidConfig,
}

pub const HALF_WIDTH: f64 = 4.0;
pub const TIME_RANGE: (f64, f64) = (0.0, 1.2);

impl FluidGroundTruth {
    pub fn new(cfg: FluidConfig) -> Result<Self> {
        if !(cfg.dim == 2 || cfg.dim == 3) {
            return Err(Error::invalid("the fluid generator supports d = 2 or 3"));
        }
        if cfg.means.is_empty() || !(cfg.std > 0.0) {
            return Err(Error::invalid("mixture needs at least one mean and a positive std"));
        }
        if cfg.means.iter().flatten().any(|m| m.abs() >= HALF_WIDTH) {
            return Err(Error::invalid("mixture means must lie inside the domain"));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &FluidConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cfg.dim || x.iter().any(|v| !(v.abs() < HALF_WIDTH)) {
            return Err(Error::Domain { point: x.to_vec() });
        }
        Ok(())
    }

    /// `(rotation angle, scale, outer factor, shift)` at time `t`.
    fn coefficients<R: Real>(&self, t: R) -> (R, R, R, [R; 2]) {
        let c = &self.cfg;
        let angle = R::cst(2.0 * PI * c.rotation) * t;
        let scale = R::cst(1.0) + R::cst(c.scale_rate) * t;
        let outer = (R::cst(1.0) + R::cst(c.outer_rate) * t) / R::cst(HALF_WIDTH);
        let s = (R::cst(PI) * t).sin();
        (angle, scale, outer, [s * R::cst(c.shift), -(s * R::cst(c.shift))])
    }

    /// The planar part of `X_t(x₀)`.
    pub fn map_xy<R: Real>(&self, t: R, x0: [R; 2]) -> [R; 2] {
        let (angle, scale, outer, shift) = self.coefficients(t);
        let w = HALF_WIDTH;
        let u = [
            R::cst(w) * (x0[0] / R::cst(w)).atanh() + shift[0],
            R::cst(w) * (x0[1] / R::cst(w)).atanh() + shift[1],
        ];
        let (c, s) = (angle.cos(), angle.sin());
        let r = [scale * (c * u[0] - s * u[1]), scale * (s * u[0] + c * u[1])];
        [R::cst(w) * (outer * r[0]).tanh(), R::cst(w) * (outer * r[1]).tanh()]
    }

    /// The planar part of `X_t⁻¹(x)`, unwinding each factor in turn.
    pub fn inverse_xy<R: Real>(&self, t: R, x: [R; 2]) -> [R; 2] {
        let (angle, scale, outer, shift) = self.coefficients(t);
        let w = HALF_WIDTH;
        let r = [(x[0] / R::cst(w)).atanh() / outer, (x[1] / R::cst(w)).atanh() / outer];
        let (c, s) = (angle.cos(), angle.sin());
        let u = [(c * r[0] + s * r[1]) / scale, (c * r[1] - s * r[0]) / scale];
        [
            R::cst(w) * ((u[0] - shift[0]) / R::cst(w)).tanh(),
            R::cst(w) * ((u[1] - shift[1]) / R::cst(w)).tanh(),
        ]
    }

    pub fn flow_map(&self, t: f64, x0: &[f64]) -> Result<Vec<f64>> {
        self.check(x0)?;
        let xy = self.map_xy(t, [x0[0], x0[1]]);
        let mut out = xy.to_vec();
        out.extend_from_slice(&x0[2..]);
        Ok(out)
    }

    pub fn flow_map_inverse(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let xy = self.inverse_xy(t, [x[0], x[1]]);
        let mut out = xy.to_vec();
        out.extend_from_slice(&x[2..]);
        Ok(out)
    }

    /// The initial mixture density, zero outside the box.
    pub fn initial_density(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| v.abs() >= HALF_WIDTH) {
            return 0.0;
        }
        let d = self.cfg.dim;
        let var = self.cfg.std * self.cfg.std;
        let norm = (2.0 * PI * var).powf(-(d as f64) / 2.0);
        let weight = 1.0 / self.cfg.means.len() as f64;
        self.cfg
            .means
            .iter()
            .map(|m| {
                let mut sq = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                if d == 3 {
                    sq += x[2] * x[2];
                }
                weight * norm * (-0.5 * sq / var).exp()
            })
            .sum()
    }

    /// `|det ∂X_t⁻¹/∂x|` of the planar part by forward-mode differentiation.
    fn inverse_jacobian_det(&self, t: f64, x: [f64; 2]) -> f64 {
        let tt = DualScalar::constant(t);
        let c0 = self.inverse_xy(tt, [DualScalar::variable(x[0]), DualScalar::constant(x[1])]);
        let c1 = self.inverse_xy(tt, [DualScalar::constant(x[0]), DualScalar::variable(x[1])]);
        (c0[0].tangent * c1[1].tangent - c1[0].tangent * c0[1].tangent).abs()
    }

    /// `ρ(t, x) = ρ₀(X_t⁻¹(x)) · |det ∂X_t⁻¹/∂x|`.
    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let x0 = self.flow_map_inverse(t, x)?;
        Ok(self.initial_density(&x0) * self.inverse_jacobian_det(t, [x[0], x[1]]))
    }

    /// `v(t, x) = ∂_t X_t(x₀)` at `x₀ = X_t⁻¹(x)`; zero along `z`.
    pub fn velocity(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let x0 = self.flow_map_inverse(t, x)?;
        let y = self.map_xy(DualScalar::variable(t), [DualScalar::constant(x0[0]), DualScalar::constant(x0[1])]);
        let mut v = vec![y[0].tangent, y[1].tangent];
        if self.cfg.dim == 3 {
            v.push(0.0);
        }
        Ok(v)
    }
}
