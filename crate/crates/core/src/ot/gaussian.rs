use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::linalg;
use crate::error::{Error, Result};

/// A multivariate normal distribution with dense covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    /// Row-major `d × d` covariance.
    pub cov: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let g = Self { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = var;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > 3 {
            return Err(Error::invalid("gaussian dimension must be 1, 2 or 3"));
        }
        if self.cov.len() != d * d {
            return Err(Error::Shape(format!("covariance needs {} entries, got {}", d * d, self.cov.len())));
        }
        cholesky(&self.cov, d).map(|_| ())
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let l = cholesky(&self.cov, d).expect("validated covariance");
        let mut out = Array2::zeros((n, d));
        for r in 0..n {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            for i in 0..d {
                out[[r, i]] = self.mean[i] + (0..=i).map(|k| l[i * d + k] * z[k]).sum::<f64>();
            }
        }
        out
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let l = cholesky(&self.cov, d).expect("validated covariance");
        // Forward substitution for L z = x − μ.
        let mut z = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| l[i * d + k] * z[k]).sum();
            z[i] = (x[i] - self.mean[i] - s) / l[i * d + i];
        }
        let logdet: f64 = (0..d).map(|i| l[i * d + i].ln()).sum();
        let q: f64 = z.iter().map(|v| v * v).sum();
        (-0.5 * q - logdet - 0.5 * d as f64 * (2.0 * PI).ln()).exp()
    }
}

/// Lower Cholesky factor, row-major.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    for i in 0..n {
        for j in 0..i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 * (1.0 + a[i * n + j].abs()) {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let v = a[i * n + i] - s;
                if !(v > 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Squared 2-Wasserstein distance between two Gaussians,
/// `‖μ₀−μ₁‖² + tr(Σ₀ + Σ₁ − 2 (Σ₁^½ Σ₀ Σ₁^½)^½)`.
pub fn gaussian_w2(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::Shape("gaussians of different dimension".into()));
    }
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let s1 = linalg::sqrt_psd(&b.cov, d).ok_or(Error::NotPositiveDefinite)?;
    let inner = linalg::matmul(&linalg::matmul(&s1, &a.cov, d), &s1, d);
    let sym: Vec<f64> = (0..d * d).map(|k| 0.5 * (inner[k] + inner[(k % d) * d + k / d])).collect();
    let cross = linalg::sqrt_psd(&sym, d).ok_or(Error::NotPositiveDefinite)?;
    let tr = (0..d).map(|i| a.cov[i * d + i] + b.cov[i * d + i] - 2.0 * cross[i * d + i]).sum::<f64>();
    Ok(mean + tr.max(0.0))
}
