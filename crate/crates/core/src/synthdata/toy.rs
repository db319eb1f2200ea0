use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-dimensional sample-only densities, all truncated to `[−4, 4]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyDensity {
    #[serde(rename = "8gaussians")]
    EightGaussians,
    #[serde(rename = "pinwheel")]
    Pinwheel,
    #[serde(rename = "circles")]
    Circles,
    #[serde(rename = "moons")]
    Moons,
    #[serde(rename = "swissroll")]
    Swissroll,
}

pub const TOY_HALF_WIDTH: f64 = 4.0;

impl ToyDensity {
    pub const ALL: [ToyDensity; 5] = [
        ToyDensity::EightGaussians,
        ToyDensity::Pinwheel,
        ToyDensity::Circles,
        ToyDensity::Moons,
        ToyDensity::Swissroll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyDensity::EightGaussians => "8gaussians",
            ToyDensity::Pinwheel => "pinwheel",
            ToyDensity::Circles => "circles",
            ToyDensity::Moons => "moons",
            ToyDensity::Swissroll => "swissroll",
        }
    }

    /// Draws `n` samples by rejection from the truncated distribution.
    pub fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let mut out = Array2::zeros((n, 2));
        let mut i = 0;
        while i < n {
            let p = self.draw(rng);
            if p.iter().all(|v| v.abs() < TOY_HALF_WIDTH) {
                out[[i, 0]] = p[0];
                out[[i, 1]] = p[1];
                i += 1;
            }
        }
        Ok(out)
    }

    fn draw(self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            ToyDensity::EightGaussians => {
                let (z0, z1) = (gauss(rng), gauss(rng));
                let k = rng.random_range(0..8) as f64;
                let a = k * PI / 4.0;
                let r = 2.0 * 2f64.sqrt();
                [r * a.cos() + 0.5 * z0 / 2f64.sqrt(), r * a.sin() + 0.5 * z1 / 2f64.sqrt()]
            }
            ToyDensity::Pinwheel => {
                let (radial, tangential, arms, rate) = (0.3, 0.1, 5, 0.25);
                let f0 = gauss(rng) * radial + 1.0;
                let f1 = gauss(rng) * tangential;
                let arm = rng.random_range(0..arms) as f64;
                let angle = arm * 2.0 * PI / arms as f64 + rate * f0.exp();
                let (c, s) = (angle.cos(), angle.sin());
                [2.0 * (c * f0 - s * f1), 2.0 * (s * f0 + c * f1)]
            }
            ToyDensity::Circles => {
                let (z0, z1) = (gauss(rng), gauss(rng));
                let r = if rng.random::<bool>() { 2.0 } else { 1.0 };
                let a = rng.random_range(0.0..2.0 * PI);
                [r * a.cos() + 0.08 * z0, r * a.sin() + 0.08 * z1]
            }
            ToyDensity::Moons => {
                let (z0, z1) = (gauss(rng), gauss(rng));
                let a = rng.random_range(0.0..PI);
                let (x, y) = if rng.random::<bool>() {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                [2.0 * (x + 0.1 * z0) - 1.0, 2.0 * (y + 0.1 * z1) - 0.2]
            }
            ToyDensity::Swissroll => {
                let (z0, z1) = (gauss(rng), gauss(rng));
                let s = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                [(s * s.cos() + z0) / 5.0, (s * s.sin() + z1) / 5.0]
            }
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl fmt::Display for ToyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyDensity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown toy density `{s}`")))
    }
}
