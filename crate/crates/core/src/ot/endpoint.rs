use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::Gaussian;
use crate::error::{Error, Result};
use crate::synthdata::ToyDensity;

/// Description of an endpoint distribution of a transport problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndpointConfig {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    /// A toy density, evaluated through a Gaussian kernel density estimate.
    Toy {
        name: ToyDensity,
        #[serde(default = "default_kde_samples")]
        kde_samples: usize,
        /// Kernel bandwidth; Scott's rule when absent.
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}

fn default_kde_samples() -> usize {
    5000
}

/// Isotropic Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub samples: Array2<f64>,
    pub bandwidth: f64,
}

impl Kde {
    pub fn new(samples: Array2<f64>, bandwidth: Option<f64>) -> Result<Self> {
        let (n, d) = samples.dim();
        if n < 2 {
            return Err(Error::invalid("kernel density estimate needs at least two samples"));
        }
        let bandwidth = match bandwidth {
            Some(h) if h > 0.0 => h,
            Some(_) => return Err(Error::invalid("bandwidth must be positive")),
            None => {
                let sd = (0..d)
                    .map(|j| {
                        let c = samples.column(j);
                        let m = c.sum() / n as f64;
                        (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                    })
                    .sum::<f64>()
                    / d as f64;
                sd * (n as f64).powf(-1.0 / (d as f64 + 4.0))
            }
        };
        Ok(Self { samples, bandwidth })
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let (n, d) = self.samples.dim();
        let h2 = self.bandwidth * self.bandwidth;
        let norm = (2.0 * PI * h2).powf(-(d as f64) / 2.0) / n as f64;
        self.samples
            .rows()
            .into_iter()
            .map(|s| {
                let q: f64 = s.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
                (-0.5 * q / h2).exp()
            })
            .sum::<f64>()
            * norm
    }
}

/// An endpoint distribution that can be sampled and evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Gaussian(Gaussian),
    Toy { name: ToyDensity, kde: Kde },
}

impl Endpoint {
    /// Builds the endpoint; toy densities draw their kernel centres from `seed`.
    pub fn from_config(cfg: &EndpointConfig, seed: u64) -> Result<Self> {
        match cfg {
            EndpointConfig::Gaussian { mean, cov } => Ok(Endpoint::Gaussian(Gaussian::new(mean.clone(), cov.clone())?)),
            EndpointConfig::Toy {
                name,
                kde_samples,
                bandwidth,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let samples = name.sample(*kde_samples, &mut rng)?;
                Ok(Endpoint::Toy {
                    name: *name,
                    kde: Kde::new(samples, *bandwidth)?,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Endpoint::Gaussian(g) => g.dim(),
            Endpoint::Toy { .. } => 2,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        match self {
            Endpoint::Gaussian(g) => Ok(g.sample(n, rng)),
            Endpoint::Toy { name, .. } => name.sample(n, rng),
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            Endpoint::Gaussian(g) => g.density(x),
            Endpoint::Toy { kde, .. } => kde.density(x),
        }
    }

    pub fn density_batch(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.density(&r.to_vec())).collect()
    }
}
