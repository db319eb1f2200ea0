use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::fluid::{FluidConfig, FluidGroundTruth, HALF_WIDTH, TIME_RANGE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One noisy sample of density and, where available, velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub x: Vec<f64>,
    pub rho: Option<f64>,
    pub velocity: Option<Vec<f64>>,
    pub split: Split,
}

/// An axis-aligned rectangle in the `xy` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: &[f64]) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }

    pub fn area(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.y[1] - self.y[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub fluid: FluidConfig,
    /// Number of equidistant observation times in `train_time_range`.
    pub train_times: usize,
    pub train_time_range: (f64, f64),
    pub train_per_time: usize,
    pub val_per_time: usize,
    /// Number of equidistant times spanning the full time range.
    pub test_times: usize,
    pub test_per_time: usize,
    /// Fraction of locations drawn from the current density; the rest are uniform.
    pub density_fraction: f64,
    /// Standard deviation of the multiplicative log-density noise.
    pub density_noise: f64,
    pub velocity_noise: f64,
    /// Velocity is only reported where the true density exceeds this.
    pub velocity_threshold: f64,
    pub val_region: Rect,
    pub test_region: Rect,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            fluid: FluidConfig::default(),
            train_times: 21,
            train_time_range: (0.0, 1.0),
            train_per_time: 1000,
            val_per_time: 100,
            test_times: 25,
            test_per_time: 200,
            density_fraction: 0.5,
            density_noise: 0.1,
            velocity_noise: 0.05,
            velocity_threshold: 1e-4,
            val_region: Rect {
                x: [-4.0, -0.5],
                y: [0.5, 4.0],
            },
            test_region: Rect {
                x: [0.5, 4.0],
                y: [-4.0, -0.5],
            },
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        FluidGroundTruth::new(self.fluid.clone())?;
        let (a, b) = self.train_time_range;
        if self.train_times < 2 || !(a < b) || a < TIME_RANGE.0 || b > TIME_RANGE.1 {
            return Err(Error::invalid("need at least two train times in an increasing sub-range of [0, 1.2]"));
        }
        if !(0.0..=1.0).contains(&self.density_fraction) {
            return Err(Error::invalid("density_fraction must lie in [0, 1]"));
        }
        if self.density_noise < 0.0 || self.velocity_noise < 0.0 || self.velocity_threshold < 0.0 {
            return Err(Error::invalid("noise levels and the velocity threshold must be non-negative"));
        }
        for r in [&self.val_region, &self.test_region] {
            if !(r.area() > 0.0) {
                return Err(Error::invalid("split regions must have positive area"));
            }
        }
        Ok(())
    }

    pub fn train_time_grid(&self) -> Vec<f64> {
        let (a, b) = self.train_time_range;
        let n = self.train_times - 1;
        (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
    }

    pub fn test_time_grid(&self) -> Vec<f64> {
        let n = self.test_times.saturating_sub(1).max(1);
        (0..self.test_times)
            .map(|k| TIME_RANGE.0 + (TIME_RANGE.1 - TIME_RANGE.0) * k as f64 / n as f64)
            .collect()
    }

    pub fn region(&self, x: &[f64]) -> Split {
        if self.test_region.contains(x) {
            Split::Test
        } else if self.val_region.contains(x) {
            Split::Val
        } else {
            Split::Train
        }
    }
}

/// A collection of observations of a single dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    pub dim: usize,
    pub observations: Vec<Observation>,
}

const MAX_ATTEMPTS_PER_POINT: usize = 2000;

impl ObservationSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            observations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn split(&self, split: Split) -> ObservationSet {
        ObservationSet {
            dim: self.dim,
            observations: self.observations.iter().filter(|o| o.split == split).cloned().collect(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.observations.iter().map(|o| o.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Positions as an `n × d` array.
    pub fn positions(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), self.dim), |(i, j)| self.observations[i].x[j])
    }

    /// Samples the fluid flow at the train, validation and test times.
    pub fn generate(cfg: &ObservationConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let gt = FluidGroundTruth::new(cfg.fluid.clone())?;
        let mut set = ObservationSet::new(gt.dim());
        for t in cfg.train_time_grid() {
            let mut need_train = cfg.train_per_time;
            let mut need_val = cfg.val_per_time;
            let budget = MAX_ATTEMPTS_PER_POINT * (need_train + need_val).max(1);
            let mut attempts = 0;
            while need_train + need_val > 0 {
                attempts += 1;
                if attempts > budget {
                    return Err(Error::invalid("could not place enough observations in the train and val regions"));
                }
                let x = sample_location(&gt, cfg.density_fraction, t, rng)?;
                let split = cfg.region(&x);
                let slot = match split {
                    Split::Train if need_train > 0 => &mut need_train,
                    Split::Val if need_val > 0 => &mut need_val,
                    _ => continue,
                };
                *slot -= 1;
                set.observations.push(observe(&gt, cfg, t, x, split, rng)?);
            }
        }
        for t in cfg.test_time_grid() {
            let budget = MAX_ATTEMPTS_PER_POINT * cfg.test_per_time.max(1);
            let (mut got, mut attempts) = (0, 0);
            while got < cfg.test_per_time {
                attempts += 1;
                if attempts > budget {
                    return Err(Error::invalid("could not place enough observations in the test region"));
                }
                let x = sample_location(&gt, cfg.density_fraction, t, rng)?;
                if cfg.region(&x) != Split::Test {
                    continue;
                }
                got += 1;
                set.observations.push(observe(&gt, cfg, t, x, Split::Test, rng)?);
            }
        }
        Ok(set)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let axes = &["x", "y", "z"][..self.dim];
        let vel = &["vx", "vy", "vz"][..self.dim];
        let mut header = vec!["t"];
        header.extend_from_slice(axes);
        header.push("rho");
        header.extend_from_slice(vel);
        header.push("split");
        wr.write_record(&header)?;
        for o in &self.observations {
            let mut rec = vec![fmt_f64(o.t)];
            rec.extend(o.x.iter().map(|v| fmt_f64(*v)));
            rec.push(o.rho.map(fmt_f64).unwrap_or_default());
            match &o.velocity {
                Some(v) => rec.extend(v.iter().map(|c| fmt_f64(*c))),
                None => rec.extend(std::iter::repeat_n(String::new(), self.dim)),
            }
            rec.push(o.split.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let dim = match header.len() {
            7 => 2,
            9 => 3,
            n => return Err(Error::invalid(format!("unexpected column count {n}"))),
        };
        let axes = &["x", "y", "z"][..dim];
        let vel = &["vx", "vy", "vz"][..dim];
        let mut expected = vec!["t"];
        expected.extend_from_slice(axes);
        expected.push("rho");
        expected.extend_from_slice(vel);
        expected.push("split");
        if header != expected {
            return Err(Error::invalid(format!("unexpected header {header:?}")));
        }
        let mut set = ObservationSet::new(dim);
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<Option<f64>> {
                let s = rec[i].trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::invalid(format!("cannot parse `{s}` as a number")))
            };
            let req = |i: usize| -> Result<f64> {
                num(i)?.ok_or_else(|| Error::invalid(format!("missing value in column `{}`", expected[i])))
            };
            let t = req(0)?;
            let x = (1..=dim).map(req).collect::<Result<Vec<_>>>()?;
            let rho = num(dim + 1)?;
            let v = (dim + 2..2 * dim + 2).map(num).collect::<Result<Vec<_>>>()?;
            let velocity = if v.iter().all(Option::is_some) {
                Some(v.into_iter().flatten().collect())
            } else if v.iter().all(Option::is_none) {
                None
            } else {
                return Err(Error::invalid("velocity must be given for all components or none"));
            };
            let split = rec[2 * dim + 2].trim().parse()?;
            set.observations.push(Observation { t, x, rho, velocity, split });
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Draws a location at time `t` from the current density with probability
/// `density_fraction`, otherwise uniformly in the box.
fn sample_location(gt: &FluidGroundTruth, density_fraction: f64, t: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let d = gt.dim();
    if rng.random::<f64>() < density_fraction {
        let cfg = gt.config();
        loop {
            let m = cfg.means[rng.random_range(0..cfg.means.len())];
            let x0: Vec<f64> = (0..d)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(rng);
                    let center = if j < 2 { m[j] } else { 0.0 };
                    center + cfg.std * z
                })
                .collect();
            if x0.iter().all(|v| v.abs() < HALF_WIDTH) {
                let x = gt.flow_map(t, &x0)?;
                if x.iter().all(|v| v.abs() < HALF_WIDTH) {
                    return Ok(x);
                }
            }
        }
    }
    Ok((0..d).map(|_| rng.random_range(-HALF_WIDTH..HALF_WIDTH)).collect())
}

fn observe(
    gt: &FluidGroundTruth,
    cfg: &ObservationConfig,
    t: f64,
    x: Vec<f64>,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<Observation> {
    let rho = gt.density(t, &x)?;
    let noisy_rho = if cfg.density_noise > 0.0 {
        let eps: f64 = Normal::new(0.0, cfg.density_noise).unwrap().sample(rng);
        rho * eps.exp()
    } else {
        rho
    };
    let velocity = if rho > cfg.velocity_threshold {
        let v = gt.velocity(t, &x)?;
        Some(if cfg.velocity_noise > 0.0 {
            let n = Normal::new(0.0, cfg.velocity_noise).unwrap();
            v.iter().map(|c| c + n.sample(rng)).collect()
        } else {
            v
        })
    } else {
        None
    };
    Ok(Observation {
        t,
        x,
        rho: Some(noisy_rho),
        velocity,
        split,
    })
}
