use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::Ops;
use crate::error::{Error, Result};

/// Axis-aligned open box `Ω = (lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() || lower.len() > 3 {
            return Err(Error::invalid("domain bounds must have equal length 1..=3"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::invalid("domain lower bounds must be below upper bounds"));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `(-r, r)^d`.
    pub fn symmetric(dim: usize, r: f64) -> Self {
        Self {
            lower: vec![-r; dim],
            upper: vec![r; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v > *l && *v < *u)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }
}

/// Maps the open box onto `R^d` with `y = w · atanh((x − c) / w)`, where `c`
/// is the box centre and `w` its half-width, so the map has unit slope at `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBijection {
    center: Vec<f64>,
    half_width: Vec<f64>,
}

impl DomainBijection {
    pub fn new(domain: &DomainBox) -> Self {
        Self {
            center: domain.center(),
            half_width: domain.half_width(),
        }
    }

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
    }

    pub fn forward<O: Ops>(&self, ops: &O, x: &O::T) -> O::T {
        let w = Self::row(&self.half_width);
        let inv_w = w.mapv(|v| 1.0 / v);
        let u = ops.mul(&ops.sub(x, &ops.constant(Self::row(&self.center))), &ops.constant(inv_w));
        ops.mul(&ops.unary(&u, crate::diffcore::Unary::Atanh), &ops.constant(w))
    }

    pub fn inverse(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut x = y.clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let w = self.half_width[j];
                *v = self.center[j] + w * (*v / w).tanh();
            }
        }
        x
    }

    /// `Σ_j −log(1 − u_j²)` per row.
    pub fn logdet(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let u = (v - self.center[j]) / self.half_width[j];
                        -(1.0 - u * u).ln()
                    })
                    .sum()
            })
            .collect()
    }
}
