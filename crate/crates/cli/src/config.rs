//! Experiment configuration files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use lflow::bijection::{ArchitectureConfig, DomainBox, EmbeddingConfig, InverseOptions};
use lflow::metrics::ConsistencyProtocol;
use lflow::odesolve::SolverConfig;
use lflow::ot::EndpointConfig;
use lflow::synthdata::{FluidConfig, ObservationConfig, HALF_WIDTH, TIME_RANGE};
use lflow::training::{DensityMode, LossWeights, OtSampling, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "synthetic2d")]
    Synthetic2d,
    #[serde(rename = "synthetic3d")]
    Synthetic3d,
    #[serde(rename = "ot")]
    Ot,
    #[serde(rename = "custom-observations")]
    CustomObservations,
}

/// Endpoints and estimation settings of a transport experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtExperiment {
    pub p0: EndpointConfig,
    pub p1: EndpointConfig,
    #[serde(default)]
    pub sampling: OtSampling,
    /// Samples per W₂² estimate.
    #[serde(default = "default_ot_samples")]
    pub samples: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Draw a fresh source batch for every repetition.
    #[serde(default = "default_true")]
    pub resample: bool,
}

fn default_ot_samples() -> usize {
    2000
}

fn default_repetitions() -> usize {
    50
}

fn default_true() -> bool {
    true
}

fn default_architecture() -> ArchitectureConfig {
    let mut arch = ArchitectureConfig::standard(10, 3, 64, 10.0);
    arch.embedding = EmbeddingConfig {
        dim: 10,
        width: 64,
        hidden_layers: 1,
    };
    arch
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_architecture")]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub density_mode: DensityMode,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub inverse: InverseOptions,
    /// Generator settings of the synthetic kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<ObservationConfig>,
    /// Observation CSV of the custom kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ot: Option<OtExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyProtocol>,
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            kind,
            seed: 0,
            architecture: default_architecture(),
            schedule: TrainSchedule {
                epochs: 50,
                learning_rate: 1e-2,
                ..TrainSchedule::default()
            },
            weights: LossWeights::default(),
            density_mode: DensityMode::default(),
            solver: SolverConfig::default(),
            inverse: InverseOptions::default(),
            data: None,
            observations: None,
            domain: None,
            time_range: None,
            ot: None,
            consistency: None,
        };
        match kind {
            ExperimentKind::Synthetic2d | ExperimentKind::Synthetic3d => {
                let dim = if kind == ExperimentKind::Synthetic2d { 2 } else { 3 };
                cfg.weights.velocity = 0.3;
                cfg.data = Some(ObservationConfig {
                    fluid: FluidConfig {
                        dim,
                        ..FluidConfig::default()
                    },
                    ..ObservationConfig::default()
                });
            }
            ExperimentKind::Ot => {
                cfg.weights.ot_kinetic = 1e-3;
                cfg.ot = Some(OtExperiment {
                    p0: EndpointConfig::Gaussian {
                        mean: vec![-1.5, 0.0],
                        cov: vec![0.25, 0.0, 0.0, 0.25],
                    },
                    p1: EndpointConfig::Gaussian {
                        mean: vec![1.5, 0.0],
                        cov: vec![0.25, 0.0, 0.0, 0.25],
                    },
                    sampling: OtSampling::default(),
                    samples: default_ot_samples(),
                    repetitions: default_repetitions(),
                    resample: true,
                });
            }
            ExperimentKind::CustomObservations => {}
        }
        cfg
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        let cfg: Self = if json {
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn dim(&self) -> usize {
        if let Some(d) = &self.domain {
            return d.dim();
        }
        match self.kind {
            ExperimentKind::Synthetic3d => 3,
            _ => self.data.as_ref().map_or(2, |d| d.fluid.dim),
        }
    }

    pub fn domain_box(&self) -> DomainBox {
        self.domain.clone().unwrap_or_else(|| DomainBox::symmetric(self.dim(), HALF_WIDTH))
    }

    pub fn time_span(&self) -> (f64, f64) {
        self.time_range.unwrap_or(match self.kind {
            ExperimentKind::Ot => (0.0, 1.0),
            _ => TIME_RANGE,
        })
    }

    /// The generator settings, with the dimension implied by the kind.
    pub fn observation_config(&self) -> Result<ObservationConfig, CliError> {
        let dim = match self.kind {
            ExperimentKind::Synthetic2d => 2,
            ExperimentKind::Synthetic3d => 3,
            _ => return Err(CliError::Usage(format!("{:?} experiments have no data generator", self.kind))),
        };
        let mut data = self.data.clone().unwrap_or_default();
        data.fluid.dim = dim;
        Ok(data)
    }

    pub fn consistency_protocol(&self) -> ConsistencyProtocol {
        self.consistency.clone().unwrap_or_else(|| ConsistencyProtocol::synthetic(self.dim()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: lflow::Error| CliError::Usage(e.to_string());
        self.architecture.validate().map_err(usage)?;
        self.schedule.validate().map_err(usage)?;
        self.weights.validate().map_err(usage)?;
        self.solver.validate().map_err(usage)?;
        if let Some(d) = &self.domain {
            DomainBox::new(d.lower.clone(), d.upper.clone()).map_err(usage)?;
        }
        if let Some((a, b)) = self.time_range {
            if !(b > a) {
                return Err(CliError::Usage("time_range must be increasing".into()));
            }
        }
        match self.kind {
            ExperimentKind::Synthetic2d | ExperimentKind::Synthetic3d => {
                let data = self.observation_config()?;
                data.validate().map_err(usage)?;
                if let Some(given) = &self.data {
                    if given.fluid.dim != data.fluid.dim {
                        return Err(CliError::Usage(format!("{:?} needs data.fluid.dim = {}", self.kind, data.fluid.dim)));
                    }
                }
            }
            ExperimentKind::Ot => {
                let ot = self.ot.as_ref().ok_or_else(|| CliError::Usage("ot experiments need an [ot] section".into()))?;
                ot.sampling.validate().map_err(usage)?;
                if ot.samples == 0 || ot.repetitions == 0 {
                    return Err(CliError::Usage("ot samples and repetitions must be positive".into()));
                }
            }
            ExperimentKind::CustomObservations => {
                if self.observations.is_none() {
                    return Err(CliError::Usage("custom-observations experiments need an observations path".into()));
                }
            }
        }
        if let Some(p) = &self.consistency {
            p.validate().map_err(usage)?;
        }
        Ok(())
    }
}
