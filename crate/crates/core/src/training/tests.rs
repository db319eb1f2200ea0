use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bijection::{ArchitectureConfig, ConditionalBijection, DomainBox, EmbeddingConfig};
use crate::diffcore::{check_gradient, Eager, LossBuilder, Ops, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::field::LagrangianField;
use crate::ot::{Endpoint, Gaussian};
use crate::synthdata::{Observation, ObservationConfig, ObservationSet, Split};
use crate::testutil::{analytic_field, random_field, Decay, Translate};

fn eager_value(v: &ndarray::ArcArray2<f64>) -> f64 {
    v[[0, 0]]
}

fn one_point_batch(rho: Option<f64>, velocity: Option<Vec<f64>>) -> DataBatch {
    let set = ObservationSet {
        dim: 2,
        observations: vec![Observation {
            t: 0.0,
            x: vec![0.0, 0.0],
            rho,
            velocity,
            split: Split::Train,
        }],
    };
    DataBatch::from_observations(&set, None).unwrap()
}

#[test]
fn density_term_examples() {
    let e = Eager;
    let b = one_point_batch(Some(std::f64::consts::E - 1.0), None);
    let zero = e.constant(array![[f64::NEG_INFINITY]]);
    let l = density_term(&e, &zero, &b, DensityMode::MseLog1p).unwrap();
    assert!((l[[0, 0]] - 1.0).abs() < 1e-15);
    let b = one_point_batch(Some(0.0), None);
    let two = e.constant(array![[2f64.ln()]]);
    assert!((density_term(&e, &two, &b, DensityMode::MseRaw).unwrap()[[0, 0]] - 4.0).abs() < 1e-14);
    let b = one_point_batch(Some(1.7), None);
    for mode in [DensityMode::MseLog1p, DensityMode::MseLog, DensityMode::MseRaw] {
        let exact = e.constant(array![[1.7f64.ln()]]);
        assert!(density_term(&e, &exact, &b, mode).unwrap()[[0, 0]].abs() < 1e-28);
    }
    let neg = one_point_batch(Some(-0.1), None);
    assert!(density_term(&e, &two, &neg, DensityMode::MseLog1p).is_err());
    let zero_obs = one_point_batch(Some(0.0), None);
    assert!(density_term(&e, &two, &zero_obs, DensityMode::MseLog).is_err());
}

#[test]
fn velocity_term_examples() {
    let e = Eager;
    let b = one_point_batch(Some(1.0), Some(vec![0.0, 0.0]));
    let pred = [e.constant(array![[1.0]]), e.constant(array![[0.0]])];
    assert_eq!(velocity_term(&e, &pred, &b).unwrap()[[0, 0]], 0.5);
    let exact = [e.constant(array![[0.0]]), e.constant(array![[0.0]])];
    assert_eq!(velocity_term(&e, &exact, &b).unwrap()[[0, 0]], 0.0);
    let none = one_point_batch(Some(1.0), None);
    assert!(velocity_term(&e, &pred, &none).is_none());
    let f = random_field(2, 0);
    assert_eq!(velocity_loss(&e, &f, f.params(), &none)[[0, 0]], 0.0);
}

#[test]
fn mass_penalty_value_and_gradient() {
    let f = analytic_field(Decay(2), 10.0, (0.0, 1.0), 2f64.ln());
    assert!((mass_penalty(&Eager, &f, f.params(), 0.5)[[0, 0]] - 1.0).abs() < 1e-15);
    assert_eq!(mass_penalty(&Eager, &f, f.params(), 0.0)[[0, 0]], 0.0);
    let tape = Tape::new();
    let root = mass_penalty(&tape, &f, f.params(), 0.5);
    let g = tape.gradient(&root, f.params()).unwrap();
    assert!((g[f.log_mass_slot().0] - 1.0).abs() < 1e-15);
}

fn synthetic_set(n_per_time: usize, seed: u64) -> ObservationSet {
    let cfg = ObservationConfig {
        train_times: 5,
        train_per_time: n_per_time,
        val_per_time: 2,
        test_times: 2,
        test_per_time: 2,
        ..ObservationConfig::default()
    };
    ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

struct DataLoss<'a> {
    field: &'a LagrangianField,
    batch: DataBatch,
    kind: usize,
}

impl LossBuilder for DataLoss<'_> {
    fn build<O: Ops>(&self, ops: &O, p: &ParamStore) -> Result<O::T> {
        match self.kind {
            0 => density_loss(ops, self.field, p, &self.batch, DensityMode::MseLog1p),
            1 => density_loss(ops, self.field, p, &self.batch, DensityMode::MseLog),
            2 => density_loss(ops, self.field, p, &self.batch, DensityMode::MseRaw),
            3 => Ok(velocity_loss(ops, self.field, p, &self.batch)),
            _ => Ok(mass_penalty(ops, self.field, p, 0.3)),
        }
    }
}

fn random_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

#[test]
fn data_losses_pass_gradient_check() {
    let mut f = random_field(2, 4);
    let mut set = synthetic_set(4, 1).split(Split::Train);
    set.observations.retain(|o| o.rho.is_some_and(|r| r > 1e-3));
    let batch = DataBatch::from_observations(&set, None).unwrap();
    assert!(batch.velocity_count() > 0);
    // Rescale the total mass so each loss stays O(1): a log-space shift, or
    // the least-squares factor for raw densities.
    let pred = f.log_density_batch(&batch.t, &batch.x).unwrap();
    let slot = f.log_mass_slot();
    let log_shift = batch.rho.iter().zip(&pred).map(|(r, p)| r.ln() - p).sum::<f64>() / pred.len() as f64;
    let raw_scale = batch.rho.iter().zip(&pred).map(|(r, p)| r * p.exp()).sum::<f64>() / pred.iter().map(|p| (2.0 * p).exp()).sum::<f64>();
    let mut f_raw = f.clone();
    f.params_mut().slice_mut(slot)[0] += log_shift;
    f_raw.params_mut().slice_mut(slot)[0] += raw_scale.ln();
    let mut idx = random_indices(f.params().len(), 60, 2);
    idx.push(f.log_mass_slot().0);
    for kind in 0..5 {
        let f = if kind == 2 { &f_raw } else { &f };
        let lb = DataLoss {
            field: f,
            batch: batch.clone(),
            kind,
        };
        let r = check_gradient(&lb, f.params(), 3e-4, Some(&idx)).unwrap();
        assert!(r.max_rel_error <= 1e-6, "loss {kind}: {r:?}");
    }
}

struct Transport<'a, M: ConditionalBijection> {
    field: &'a LagrangianField<M>,
    batch: OtBatch,
    weights: LossWeights,
}

impl<M: ConditionalBijection> LossBuilder for Transport<'_, M> {
    fn build<O: Ops>(&self, ops: &O, p: &ParamStore) -> Result<O::T> {
        Ok(ot_objective(ops, self.field, p, &self.batch, &self.weights, |_| 0.0).0)
    }
}

fn gaussian_pair() -> (Endpoint, Endpoint) {
    (
        Endpoint::Gaussian(Gaussian::isotropic(vec![-1.0, 0.0], 0.25).unwrap()),
        Endpoint::Gaussian(Gaussian::isotropic(vec![1.0, 0.5], 0.25).unwrap()),
    )
}

#[test]
fn transport_objective_passes_gradient_check() {
    let f = random_field(2, 5);
    let (p0, p1) = gaussian_pair();
    let sampling = OtSampling {
        n_space: 16,
        n_time: 3,
        n_kinetic: 8,
        endpoint_uniform: 0.1,
    };
    let batch = OtBatch::sample(&p0, &p1, f.domain(), (0.0, 1.0), &sampling, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let idx = random_indices(f.params().len(), 60, 3);
    for (endpoint, kinetic) in [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)] {
        let lb = Transport {
            field: &f,
            batch: batch.clone(),
            weights: LossWeights {
                ot_endpoint: endpoint,
                ot_kinetic: kinetic,
                mass: 0.1,
                ..LossWeights::default()
            },
        };
        let r = check_gradient(&lb, f.params(), 3e-4, Some(&idx)).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{endpoint}/{kinetic}: {r:?}");
    }
}

#[test]
fn static_field_matching_both_endpoints_has_zero_objective() {
    let f = analytic_field(Translate(vec![0.0, 0.0]), 6.0, (0.0, 1.0), 0.0);
    let g = Endpoint::Gaussian(Gaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap());
    let batch = OtBatch::sample(&g, &g, f.domain(), (0.0, 1.0), &OtSampling::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (v, parts) = ot_objective(&Eager, &f, f.params(), &batch, &LossWeights::default(), eager_value);
    assert!(v[[0, 0]].abs() < 1e-12, "{parts:?}");
}

#[test]
fn kinetic_term_of_constant_translation() {
    let u = [0.6, -0.8];
    let f = analytic_field(Translate(u.to_vec()), 8.0, (0.0, 1.0), 0.0);
    let p0 = Endpoint::Gaussian(Gaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap());
    let p1 = Endpoint::Gaussian(Gaussian::isotropic(u.to_vec(), 1.0).unwrap());
    let sampling = OtSampling {
        n_space: 8,
        n_time: 64,
        n_kinetic: 64,
        endpoint_uniform: 0.1,
    };
    let batch = OtBatch::sample(&p0, &p1, f.domain(), (0.0, 1.0), &sampling, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let weights = LossWeights {
        ot_endpoint: 0.0,
        ..LossWeights::default()
    };
    let (_, parts) = ot_objective(&Eager, &f, f.params(), &batch, &weights, eager_value);
    assert!((parts.kinetic - 1.0).abs() < 0.05, "{parts:?}");
}

/// `∫₀¹ ∫_Ω |x|² ρ(t, x) dx dt` for the decay field by midpoint quadrature in
/// space and Simpson's rule in time.
fn decay_kinetic_quadrature(half_width: f64) -> f64 {
    let n = 512;
    let h = 2.0 * half_width / n as f64;
    let nt = 20;
    let mut total = 0.0;
    for k in 0..=nt {
        let t = k as f64 / nt as f64;
        let w = if k == 0 || k == nt {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let s = (-t).exp();
        let mut inner = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -half_width + (i as f64 + 0.5) * h;
                let y = -half_width + (j as f64 + 0.5) * h;
                let r2 = x * x + y * y;
                inner += r2 * s * s * (-0.5 * s * s * r2).exp() / (2.0 * std::f64::consts::PI);
            }
        }
        total += w * inner * h * h;
    }
    total / (3.0 * nt as f64)
}

#[test]
fn kinetic_estimator_is_unbiased() {
    let f = analytic_field(Decay(2), 6.0, (0.0, 1.0), 0.0);
    let (p0, p1) = (
        Endpoint::Gaussian(Gaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap()),
        Endpoint::Gaussian(Gaussian::isotropic(vec![0.0, 0.0], 2f64.exp()).unwrap()),
    );
    let sampling = OtSampling {
        n_space: 4,
        n_time: 8,
        n_kinetic: 64,
        endpoint_uniform: 0.1,
    };
    let weights = LossWeights {
        ot_endpoint: 0.0,
        ..LossWeights::default()
    };
    let estimates: Vec<f64> = (0..100)
        .map(|seed| {
            let b = OtBatch::sample(&p0, &p1, f.domain(), (0.0, 1.0), &sampling, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            ot_objective(&Eager, &f, f.params(), &b, &weights, eager_value).1.kinetic
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 100.0;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let reference = decay_kinetic_quadrature(6.0);
    assert!((mean - reference).abs() <= 3.0 * sd / 10.0, "{mean} ± {} vs {reference}", sd / 10.0);
}

#[test]
fn adam_examples() {
    let mut a = Adam::new(1, 0.9, 0.999, 1e-8, 0.0);
    let mut p = [0.5];
    assert!(a.update(&mut p, &[0.0], 0.1).unwrap());
    assert_eq!(p, [0.5]);
    let mut a = Adam::new(1, 0.9, 0.999, 1e-8, 0.0);
    let mut p = [0.0];
    a.update(&mut p, &[1.0], 0.1).unwrap();
    assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{}", p[0]);
    let before = p[0];
    a.update(&mut p, &[1.0], 0.1).unwrap();
    assert!(p[0] < before);
    let snapshot = a.clone();
    assert!(!a.update(&mut p, &[f64::NAN], 0.1).unwrap());
    assert_eq!(a, snapshot);
    assert!(a.update(&mut p, &[1.0, 2.0], 0.1).is_err());
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(learning_rate(1e-2, 1e-2, true, 0, 0, 100), 1e-2);
    assert!((learning_rate(1e-2, 1e-2, true, 0, 99, 100) - 1e-4).abs() < 1e-18);
    assert!((learning_rate(1e-2, 1e-2, true, 0, 33, 67) - 0.5 * (1e-2 + 1e-4)).abs() < 1e-15);
    assert_eq!(learning_rate(1e-2, 1e-2, false, 0, 50, 100), 1e-2);
    assert!((learning_rate(1e-2, 1e-2, false, 10, 4, 100) - 5e-3).abs() < 1e-18);
    assert!((learning_rate(1e-2, 1e-2, true, 10, 0, 100) - 1e-3).abs() < 1e-18);
}

fn tiny_arch() -> ArchitectureConfig {
    let mut arch = ArchitectureConfig::standard(2, 2, 8, 10.0);
    arch.embedding = EmbeddingConfig {
        dim: 4,
        width: 8,
        hidden_layers: 1,
    };
    arch
}

fn tiny_trainer(epochs: usize, weights: LossWeights) -> Trainer {
    let arch = tiny_arch();
    let f = LagrangianField::new(&arch, DomainBox::symmetric(2, 4.0), (0.0, 1.2), 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let schedule = TrainSchedule {
        epochs,
        batch_size: 64,
        learning_rate: 5e-3,
        seed: 11,
        ..TrainSchedule::default()
    };
    Trainer::new(f, arch, schedule, weights).unwrap()
}

#[test]
fn smoke_run_writes_checkpoints() {
    let set = synthetic_set(40, 2);
    let (train, val) = (set.split(Split::Train), set.split(Split::Val));
    assert_eq!(train.len(), 200);
    let dir = tempfile::tempdir().unwrap();
    let mut tr = tiny_trainer(1, LossWeights::default());
    let obj = Objective::Observations {
        train: &train,
        val: Some(&val),
        mode: DensityMode::MseLog1p,
    };
    let rep = tr.fit(&obj, Some(dir.path())).unwrap();
    assert_eq!(rep.epochs.len(), 1);
    assert!(rep.epochs[0].train_loss.is_finite());
    assert!(rep.epochs[0].val_loss.unwrap().is_finite());
    let ck = Checkpoint::load(rep.final_checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(ck.epoch, 1);
    assert!(dir.path().join("best.json").exists() && dir.path().join("report.json").exists());

    let restored = ck.restore().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let t = rng.random_range(0.0..1.2);
        let x = [rng.random_range(-3.9..3.9), rng.random_range(-3.9..3.9)];
        assert_eq!(restored.log_density(t, &x).unwrap().to_bits(), tr.field.log_density(t, &x).unwrap().to_bits());
    }
}

#[test]
fn training_is_deterministic_and_improves() {
    let set = synthetic_set(60, 3).split(Split::Train);
    let obj = Objective::Observations {
        train: &set,
        val: None,
        mode: DensityMode::MseLog1p,
    };
    let mut a = tiny_trainer(20, LossWeights::default());
    let ra = a.fit(&obj, None).unwrap();
    let mut b = tiny_trainer(20, LossWeights::default());
    b.fit(&obj, None).unwrap();
    assert_eq!(a.field.params().values(), b.field.params().values());
    assert!(ra.epochs[19].train_loss < ra.epochs[0].train_loss);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let set = synthetic_set(30, 4).split(Split::Train);
    let obj = Objective::Observations {
        train: &set,
        val: None,
        mode: DensityMode::MseLog1p,
    };
    let mut full = tiny_trainer(4, LossWeights::default());
    full.schedule.cosine = false;
    full.fit(&obj, None).unwrap();
    let mut first = tiny_trainer(4, LossWeights::default());
    first.schedule.cosine = false;
    first.schedule.epochs = 2;
    first.fit(&obj, None).unwrap();
    let ck = first.checkpoint();
    let mut second = Trainer::resume(&ck, full.schedule.clone(), LossWeights::default()).unwrap();
    let rep = second.fit(&obj, None).unwrap();
    assert_eq!(rep.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![3, 4]);
    assert_eq!(second.field.params().values(), full.field.params().values());
}

#[test]
fn mass_penalty_alone_shrinks_total_mass() {
    let set = synthetic_set(20, 5).split(Split::Train);
    let obj = Objective::Observations {
        train: &set,
        val: None,
        mode: DensityMode::MseLog1p,
    };
    let mut tr = tiny_trainer(
        4,
        LossWeights {
            density: 0.0,
            velocity: 0.0,
            mass: 1.0,
            ..LossWeights::default()
        },
    );
    let start = tr.field.total_mass();
    let rep = tr.fit(&obj, None).unwrap();
    let masses: Vec<f64> = std::iter::once(start).chain(rep.epochs.iter().map(|e| e.total_mass)).collect();
    assert!(masses.windows(2).all(|w| w[1] < w[0]), "{masses:?}");
}

#[test]
fn non_finite_loss_aborts() {
    let mut set = synthetic_set(20, 6).split(Split::Train);
    for o in &mut set.observations {
        o.rho = Some(f64::NAN);
    }
    let obj = Objective::Observations {
        train: &set,
        val: None,
        mode: DensityMode::MseLog1p,
    };
    let mut tr = tiny_trainer(1, LossWeights::default());
    assert!(matches!(tr.fit(&obj, None), Err(Error::Diverged(_))));
}

#[test]
fn transport_training_runs() {
    let (p0, p1) = gaussian_pair();
    let sampling = OtSampling {
        n_space: 32,
        n_time: 2,
        n_kinetic: 16,
        endpoint_uniform: 0.1,
    };
    let mut tr = tiny_trainer(2, LossWeights::default());
    tr.field = LagrangianField::new(&tiny_arch(), DomainBox::symmetric(2, 4.0), (0.0, 1.0), 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    tr.schedule.steps_per_epoch = 3;
    let rep = tr
        .fit(
            &Objective::Transport {
                p0: &p0,
                p1: &p1,
                sampling: &sampling,
            },
            None,
        )
        .unwrap();
    assert_eq!(rep.epochs.len(), 2);
    assert!(rep.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_r2.is_none()));
}

#[test]
fn weights_and_schedule_validation() {
    assert!(LossWeights {
        mass: -1.0,
        ..LossWeights::default()
    }
    .validate()
    .is_err());
    assert!(TrainSchedule {
        epochs: 0,
        ..TrainSchedule::default()
    }
    .validate()
    .is_err());
    let text = serde_json::to_string(&TrainSchedule::default()).unwrap();
    assert_eq!(serde_json::from_str::<TrainSchedule>(&text).unwrap(), TrainSchedule::default());
    assert!(serde_json::from_str::<LossWeights>(r#"{"densty": 1.0}"#).is_err());
    let _ = Array2::<f64>::zeros((1, 1));
}

