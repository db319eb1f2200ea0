use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::losses::{data_loss, DataBatch, DensityMode, LossWeights};
use super::optim::{learning_rate, Adam};
use super::transport::{ot_objective, OtBatch, OtSampling};
use crate::bijection::ArchitectureConfig;
use crate::diffcore::{Eager, Tape};
use crate::error::{Error, Result};
use crate::field::LagrangianField;
use crate::metrics::r2;
use crate::ot::Endpoint;
use crate::synthdata::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer steps per epoch for sample-based objectives.
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Final learning rate of the cosine schedule, relative to the peak.
    pub lr_floor: f64,
    pub cosine: bool,
    /// Optimizer steps of linear learning-rate warmup.
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Power iterations of the spectral normalization after each step.
    pub spectral_iters: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            steps_per_epoch: 50,
            learning_rate: 1e-3,
            lr_floor: 1e-2,
            cosine: true,
            warmup_steps: 0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            spectral_iters: 1,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::invalid("epochs, batch size and steps per epoch must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_floor >= 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("learning rate must be positive and decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("invalid Adam hyper-parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Explained variance of the validation densities.
    pub val_r2: Option<f64>,
    pub seconds: f64,
    pub skipped_steps: usize,
    pub learning_rate: f64,
    pub total_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
}

/// What the trainer optimizes.
pub enum Objective<'a> {
    Observations {
        train: &'a ObservationSet,
        val: Option<&'a ObservationSet>,
        mode: DensityMode,
    },
    Transport {
        p0: &'a Endpoint,
        p1: &'a Endpoint,
        sampling: &'a OtSampling,
    },
}

/// Owns a field and its optimizer state across epochs.
pub struct Trainer {
    pub field: LagrangianField,
    pub architecture: ArchitectureConfig,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(field: LagrangianField, architecture: ArchitectureConfig, schedule: TrainSchedule, weights: LossWeights) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        let optimizer = Adam::new(field.params().len(), schedule.beta1, schedule.beta2, schedule.eps, schedule.weight_decay);
        Ok(Self {
            field,
            architecture,
            schedule,
            weights,
            optimizer,
            epoch: 0,
        })
    }

    /// Continues from a checkpoint; epoch numbering resumes after its last epoch.
    pub fn resume(ck: &Checkpoint, schedule: TrainSchedule, weights: LossWeights) -> Result<Self> {
        let field = ck.restore()?;
        let mut t = Self::new(field, ck.architecture.clone(), schedule, weights)?;
        if let Some(opt) = &ck.optimizer {
            t.optimizer = opt.clone();
        }
        t.epoch = ck.epoch;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.field, &self.architecture, Some(&self.optimizer), self.schedule.seed, self.epoch)
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.schedule.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    fn steps_per_epoch(&self, objective: &Objective) -> usize {
        match objective {
            Objective::Observations { train, .. } => train.len().div_ceil(self.schedule.batch_size),
            Objective::Transport { .. } => self.schedule.steps_per_epoch,
        }
    }

    /// Runs the remaining epochs of the schedule. With `out_dir`, writes
    /// `best.json`, `final.json` and `report.json` there.
    pub fn fit(&mut self, objective: &Objective, out_dir: Option<&Path>) -> Result<TrainReport> {
        if let Objective::Observations { train, .. } = objective {
            if train.is_empty() {
                return Err(Error::invalid("no training observations"));
            }
            if train.dim != self.field.dim() {
                return Err(Error::Shape("observation and field dimensions differ".into()));
            }
        }
        let steps = self.steps_per_epoch(objective);
        let total = self.schedule.epochs * steps;
        let mut report = TrainReport {
            epochs: Vec::new(),
            best_epoch: None,
            best_checkpoint: None,
            final_checkpoint: None,
        };
        let mut best: Option<(f64, Checkpoint)> = None;
        while self.epoch < self.schedule.epochs {
            let started = Instant::now();
            let mut rng = self.epoch_rng(self.epoch);
            let mut sum = 0.0;
            let mut skipped = 0;
            let mut lr = self.schedule.learning_rate;
            let batches = self.epoch_batches(objective, steps, &mut rng)?;
            for (k, batch) in batches.into_iter().enumerate() {
                let tape = Tape::new();
                let (root, value) = match (&batch, objective) {
                    (Batch::Data(b), Objective::Observations { mode, .. }) => {
                        let (root, parts) =
                            data_loss(&tape, &self.field, self.field.params(), b, &self.weights, *mode, |v| tape.scalar_value(v))?;
                        (root, parts.total)
                    }
                    (Batch::Transport(b), _) => {
                        let (root, parts) =
                            ot_objective(&tape, &self.field, self.field.params(), b, &self.weights, |v| tape.scalar_value(v));
                        (root, parts.total)
                    }
                    _ => unreachable!("batch kind follows the objective"),
                };
                if !value.is_finite() {
                    if k == 0 {
                        return Err(Error::Diverged(format!(
                            "non-finite loss at the start of epoch {}",
                            self.epoch + 1
                        )));
                    }
                    skipped += 1;
                    continue;
                }
                let grads = match tape.gradient(&root, self.field.params()) {
                    Ok(g) => g,
                    Err(Error::NonFinite { .. }) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                lr = learning_rate(
                    self.schedule.learning_rate,
                    self.schedule.lr_floor,
                    self.schedule.cosine,
                    self.schedule.warmup_steps,
                    self.epoch * steps + k,
                    total,
                );
                if self.optimizer.update(self.field.params_mut().values_mut(), &grads, lr)? {
                    self.field.spectral_normalize(self.schedule.spectral_iters);
                } else {
                    skipped += 1;
                }
                sum += value;
            }
            if skipped > 0 {
                log::warn!("epoch {}: skipped {skipped} steps with non-finite values", self.epoch + 1);
            }
            let done = steps - skipped;
            let train_loss = if done > 0 { sum / done as f64 } else { f64::NAN };
            let (val_loss, val_r2) = self.validate(objective)?;
            self.epoch += 1;
            let record = EpochRecord {
                epoch: self.epoch,
                train_loss,
                val_loss,
                val_r2,
                seconds: started.elapsed().as_secs_f64(),
                skipped_steps: skipped,
                learning_rate: lr,
                total_mass: self.field.total_mass(),
            };
            log::info!(
                "epoch {} loss {:.6e} val {:?} r2 {:?} ({:.1}s)",
                record.epoch,
                record.train_loss,
                record.val_loss,
                record.val_r2,
                record.seconds
            );
            let score = val_r2.map(|r| -r).or(val_loss).unwrap_or(train_loss);
            if score.is_finite() && best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((score, self.checkpoint()));
                report.best_epoch = Some(self.epoch);
            }
            report.epochs.push(record);
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let fin = dir.join("final.json");
            self.checkpoint().save(&fin)?;
            report.final_checkpoint = Some(fin);
            if let Some((_, ck)) = &best {
                let path = dir.join("best.json");
                ck.save(&path)?;
                report.best_checkpoint = Some(path);
            }
            std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        }
        Ok(report)
    }

    fn epoch_batches(&self, objective: &Objective, steps: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Batch>> {
        match objective {
            Objective::Observations { train, .. } => {
                let mut order: Vec<usize> = (0..train.len()).collect();
                order.shuffle(rng);
                order
                    .chunks(self.schedule.batch_size)
                    .map(|rows| DataBatch::from_observations(train, Some(rows)).map(Batch::Data))
                    .collect()
            }
            Objective::Transport { p0, p1, sampling } => (0..steps)
                .map(|_| {
                    OtBatch::sample(p0, p1, self.field.domain(), self.field.time_range(), sampling, rng).map(Batch::Transport)
                })
                .collect(),
        }
    }

    fn validate(&self, objective: &Objective) -> Result<(Option<f64>, Option<f64>)> {
        let Objective::Observations { val: Some(val), mode, .. } = objective else {
            return Ok((None, None));
        };
        if val.is_empty() {
            return Ok((None, None));
        }
        let mut losses = 0.0;
        let mut pred = Vec::new();
        let mut obs = Vec::new();
        let rows: Vec<usize> = (0..val.len()).collect();
        for chunk in rows.chunks(1024) {
            let b = DataBatch::from_observations(val, Some(chunk))?;
            let (l, _) = data_loss(&Eager, &self.field, self.field.params(), &b, &self.weights, *mode, |v| v[[0, 0]])?;
            losses += l[[0, 0]] * chunk.len() as f64;
            let log_rho = self.field.log_density_batch(&b.t, &b.x)?;
            for (i, o) in chunk.iter().enumerate() {
                if let Some(r) = val.observations[*o].rho {
                    pred.push(log_rho[i].exp());
                    obs.push(r);
                }
            }
        }
        let r = if obs.len() > 1 { r2(&pred, &obs).ok() } else { None };
        Ok((Some(losses / val.len() as f64), r))
    }
}

enum Batch {
    Data(DataBatch),
    Transport(OtBatch),
}

/// Predicted densities at the observation locations.
pub fn predict_densities(field: &LagrangianField, set: &ObservationSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    let rows: Vec<usize> = (0..set.len()).collect();
    for chunk in rows.chunks(1024) {
        let t = Array2::from_shape_fn((chunk.len(), 1), |(i, _)| set.observations[chunk[i]].t);
        let x = Array2::from_shape_fn((chunk.len(), set.dim), |(i, j)| set.observations[chunk[i]].x[j]);
        out.extend(field.log_density_batch(&t, &x)?.into_iter().map(f64::exp));
    }
    Ok(out)
}
