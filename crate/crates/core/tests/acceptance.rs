//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stdout, so the summary shows even with captured output.

use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lflow::bijection::{ArchitectureConfig, DomainBox, EmbeddingConfig, InverseOptions, Layer};
use lflow::diffcore::{check_gradient, Eager, LossBuilder, Ops, ParamStore};
use lflow::field::LagrangianField;
use lflow::metrics::{consistency_eval, mse, r2, variance, ConsistencyProtocol};
use lflow::odesolve::{integrate, order_check, Method, SolverConfig, VelocityOffset};
use lflow::ot::{discrete_w2, empirical_w2, gaussian_w2, transport_samples, Endpoint, Gaussian};
use lflow::synthdata::{FluidConfig, FluidGroundTruth, ObservationConfig, ObservationSet, Split};
use lflow::training::{
    density_loss, mass_penalty, ot_objective, predict_densities, velocity_loss, DataBatch, DensityMode, LossWeights, Objective,
    OtBatch, OtSampling, TrainSchedule, Trainer,
};
use lflow::Result;

fn report(name: &str, pass: bool, detail: String, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    let pass = pass && elapsed <= budget;
    let line = format!(
        "[{}] {name}: {detail} ({:.1}s, budget {}s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{line}");
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn network_field(blocks: usize, width: usize, seed: u64) -> LagrangianField {
    let mut arch = ArchitectureConfig::standard(blocks, 3, width, 15.0);
    arch.embedding = EmbeddingConfig {
        dim: 6,
        width: 16,
        hidden_layers: 1,
    };
    let mut f = LagrangianField::new(&arch, DomainBox::symmetric(2, 4.0), (0.0, 1.2), 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    f.stack_mut().set_inverse_options(InverseOptions {
        tol: 1e-13,
        max_iter: 1000,
    });
    f
}

fn interior(rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    (rng.random_range(0.05..1.15), vec![rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5)])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn midpoint_grid(n: usize, half: f64) -> (Array2<f64>, f64) {
    let h = 2.0 * half / n as f64;
    let grid = Array2::from_shape_fn((n * n, 2), |(r, c)| {
        let k = if c == 0 { r / n } else { r % n };
        -half + (k as f64 + 0.5) * h
    });
    (grid, h * h)
}

#[test]
fn continuity_equation_holds_by_construction() {
    let start = Instant::now();
    let f = network_field(3, 16, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (t, x) = interior(&mut rng);
        let rho = f.density(t, &x).unwrap();
        let res = f.ce_residual(t, &x, 1e-4).unwrap();
        worst = worst.max(res.abs() / (1e-5 * (1.0 + rho)));
    }
    report(
        "continuity residual",
        worst <= 1.0,
        format!("max |residual| / 1e-5(1+rho) = {worst:.3} over 200 points"),
        start,
        minutes(1),
    );
}

fn synthetic_data(train_per_time: usize, val_per_time: usize, test_times: usize, test_per_time: usize) -> ObservationSet {
    let cfg = ObservationConfig {
        train_per_time,
        val_per_time,
        test_times,
        test_per_time,
        ..ObservationConfig::default()
    };
    ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn train_observations(arch: ArchitectureConfig, schedule: TrainSchedule, velocity: f64, data: &ObservationSet) -> LagrangianField {
    let field = LagrangianField::new(&arch, DomainBox::symmetric(2, 4.0), (0.0, 1.2), 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let weights = LossWeights {
        velocity,
        ..LossWeights::default()
    };
    let mut trainer = Trainer::new(field, arch, schedule, weights).unwrap();
    let (train, val) = (data.split(Split::Train), data.split(Split::Val));
    trainer
        .fit(
            &Objective::Observations {
                train: &train,
                val: Some(&val),
                mode: DensityMode::MseLog1p,
            },
            None,
        )
        .unwrap();
    trainer.field
}

#[test]
fn transported_density_matches_field_density() {
    let start = Instant::now();
    let protocol = ConsistencyProtocol::synthetic(2);
    let untrained = network_field(3, 16, 1);
    let mut arch = ArchitectureConfig::standard(3, 3, 16, 10.0);
    arch.embedding = EmbeddingConfig {
        dim: 6,
        width: 16,
        hidden_layers: 1,
    };
    let schedule = TrainSchedule {
        epochs: 3,
        learning_rate: 1e-2,
        ..TrainSchedule::default()
    };
    let trained = train_observations(arch, schedule, 0.3, &synthetic_data(200, 20, 2, 20));
    let mut lap = Instant::now();
    let mut laps = Vec::new();
    let mut timed = |r: lflow::metrics::ConsistencyReport| {
        laps.push(format!("{:.0}s", lap.elapsed().as_secs_f64()));
        lap = Instant::now();
        r
    };
    let a = timed(consistency_eval(&untrained, &protocol).unwrap());
    let b = timed(consistency_eval(&trained, &protocol).unwrap());
    let corrupted = VelocityOffset {
        inner: &trained,
        offset: vec![0.5, -0.5],
    };
    let control = ConsistencyProtocol {
        points: 250,
        ..protocol.clone()
    };
    let c = timed(consistency_eval(&corrupted, &control).unwrap());
    report(
        "flow consistency",
        a.smape <= 1e-3 && b.smape <= 1e-3 && c.smape > 0.05,
        format!(
            "sMAPE untrained {:.2e}, trained {:.2e} (<= 1e-3) on {} points; corrupted velocity {:.3} (> 0.05) on {} points; evaluations {}",
            a.smape,
            b.smape,
            a.evaluated,
            c.smape,
            c.evaluated,
            laps.join("/")
        ),
        start,
        minutes(10),
    );
}

#[test]
fn learns_synthetic_fluid() {
    let start = Instant::now();
    let data = synthetic_data(800, 60, 25, 60);
    assert!(data.len() <= 20_000);
    let mut arch = ArchitectureConfig::standard(10, 3, 64, 10.0);
    arch.embedding = EmbeddingConfig {
        dim: 10,
        width: 64,
        hidden_layers: 1,
    };
    let schedule = TrainSchedule {
        epochs: 50,
        learning_rate: 1e-2,
        ..TrainSchedule::default()
    };
    let field = train_observations(arch, schedule, 0.3, &data);
    let test = data.split(Split::Test);
    let pred = predict_densities(&field, &test).unwrap();
    let obs: Vec<f64> = test.observations.iter().map(|o| o.rho.unwrap()).collect();
    let score = r2(&pred, &obs).unwrap();

    // Velocity is only identifiable where there is mass.
    let gt = FluidGroundTruth::new(FluidConfig::default()).unwrap();
    let (mut est, mut truth) = (Vec::new(), Vec::new());
    for o in &test.observations {
        if gt.density(o.t, &o.x).unwrap() >= 0.1 {
            est.extend(field.velocity(o.t, &o.x).unwrap());
            truth.extend(gt.velocity(o.t, &o.x).unwrap());
        }
    }
    let vel_mse = mse(&est, &truth).unwrap();
    let spread = (0..2)
        .map(|k| variance(&truth.iter().skip(k).step_by(2).copied().collect::<Vec<_>>()))
        .sum::<f64>()
        / 2.0;
    report(
        "synthetic fluid",
        score >= 0.8 && vel_mse < spread,
        format!(
            "test R2 {score:.3} (>= 0.8), velocity MSE {vel_mse:.4} vs variance {spread:.4} on {} supported points",
            truth.len() / 2
        ),
        start,
        minutes(30),
    );
}

#[test]
fn grid_quadrature_conserves_mass() {
    let start = Instant::now();
    let f = network_field(3, 16, 7);
    let (grid, cell) = midpoint_grid(256, 4.0);
    let mut worst: f64 = 0.0;
    for t in [0.0, 0.3, 0.6, 0.9, 1.2] {
        let ld = f.log_density_batch(&array![[t]], &grid).unwrap();
        let mass: f64 = ld.iter().map(|v| v.exp()).sum::<f64>() * cell;
        worst = worst.max((mass - f.total_mass()).abs() / f.total_mass());
    }
    report(
        "mass conservation",
        worst <= 0.02,
        format!("max relative quadrature error {worst:.2e} at 5 times (<= 0.02)"),
        start,
        minutes(1),
    );
}

#[test]
fn velocity_and_flow_map_identities() {
    let start = Instant::now();
    let f = network_field(3, 16, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-4;
    let (mut vel_err, mut group_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let (t, x) = interior(&mut rng);
        let s = rng.random_range(0.0..1.2);
        let up = f.flow_map(s, t + h, &x).unwrap();
        let down = f.flow_map(s, t - h, &x).unwrap();
        let v = f.velocity(t, &f.flow_map(s, t, &x).unwrap()).unwrap();
        let fd: Vec<f64> = (0..2).map(|i| (up[i] - down[i]) / (2.0 * h)).collect();
        vel_err = vel_err.max(dist(&v, &fd) / norm(&v).max(1e-2));

        let mut ts: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.2)).collect();
        ts.sort_by(f64::total_cmp);
        let two = f.flow_map(ts[1], ts[2], &f.flow_map(ts[0], ts[1], &x).unwrap()).unwrap();
        let direct = f.flow_map(ts[0], ts[2], &x).unwrap();
        group_err = group_err.max(dist(&two, &direct) / norm(&direct).max(1.0));
    }
    report(
        "flow identities",
        vel_err <= 1e-5 && group_err <= 1e-7,
        format!("velocity vs d/dt flow map {vel_err:.2e} (<= 1e-5), group property {group_err:.2e} (<= 1e-7)"),
        start,
        minutes(1),
    );
}

enum Loss {
    Density(DensityMode),
    Velocity,
    Mass,
    Transport(Box<OtBatch>),
}

struct Check<'a> {
    field: &'a LagrangianField,
    batch: &'a DataBatch,
    loss: Loss,
}

impl LossBuilder for Check<'_> {
    fn build<O: Ops>(&self, ops: &O, p: &ParamStore) -> Result<O::T> {
        match &self.loss {
            Loss::Density(mode) => density_loss(ops, self.field, p, self.batch, *mode),
            Loss::Velocity => Ok(velocity_loss(ops, self.field, p, self.batch)),
            Loss::Mass => Ok(mass_penalty(ops, self.field, p, 0.3)),
            Loss::Transport(batch) => {
                let weights = LossWeights {
                    mass: 0.1,
                    ..LossWeights::default()
                };
                Ok(ot_objective(ops, self.field, p, batch, &weights, |_| 0.0).0)
            }
        }
    }
}

#[test]
fn every_loss_passes_gradient_check() {
    let start = Instant::now();
    let mut f = network_field(3, 16, 4);
    let mut set = synthetic_data(4, 2, 2, 2).split(Split::Train);
    set.observations.retain(|o| o.rho.is_some_and(|r| r > 1e-3));
    let batch = DataBatch::from_observations(&set, None).unwrap();
    // Shift the total mass so every loss is O(1): in log space for the
    // log modes, by the least-squares factor for raw densities.
    let pred = f.log_density_batch(&batch.t, &batch.x).unwrap();
    let slot = f.log_mass_slot();
    let log_shift = batch.rho.iter().zip(&pred).map(|(r, p)| r.ln() - p).sum::<f64>() / pred.len() as f64;
    let raw_scale =
        batch.rho.iter().zip(&pred).map(|(r, p)| r * p.exp()).sum::<f64>() / pred.iter().map(|p| (2.0 * p).exp()).sum::<f64>();
    let mut f_raw = f.clone();
    f.params_mut().slice_mut(slot)[0] += log_shift;
    f_raw.params_mut().slice_mut(slot)[0] += raw_scale.ln();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut idx: Vec<usize> = (0..60).map(|_| rng.random_range(0..f.params().len())).collect();
    idx.push(slot.0);

    let p0 = Endpoint::Gaussian(Gaussian::isotropic(vec![-1.0, 0.0], 0.25).unwrap());
    let p1 = Endpoint::Gaussian(Gaussian::isotropic(vec![1.0, 0.5], 0.25).unwrap());
    let sampling = OtSampling {
        n_space: 16,
        n_time: 3,
        n_kinetic: 8,
        ..OtSampling::default()
    };
    let ot_batch = OtBatch::sample(&p0, &p1, f.domain(), (0.0, 1.0), &sampling, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

    let losses = [
        ("density log1p", Loss::Density(DensityMode::MseLog1p)),
        ("density log", Loss::Density(DensityMode::MseLog)),
        ("density raw", Loss::Density(DensityMode::MseRaw)),
        ("velocity", Loss::Velocity),
        ("mass", Loss::Mass),
        ("transport", Loss::Transport(Box::new(ot_batch))),
    ];
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, loss) in losses {
        let field = if matches!(loss, Loss::Density(DensityMode::MseRaw)) { &f_raw } else { &f };
        let check = Check {
            field,
            batch: &batch,
            loss,
        };
        let r = check_gradient(&check, field.params(), 3e-4, Some(&idx)).unwrap();
        worst = worst.max(r.max_rel_error);
        parts.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    report(
        "gradient integrity",
        worst <= 1e-6,
        format!("max relative error on {} parameters: {} (<= 1e-6)", idx.len(), parts.join(", ")),
        start,
        minutes(5),
    );
}

#[test]
fn stack_inverts_and_residuals_contract() {
    let start = Instant::now();
    let mut arch = ArchitectureConfig::standard(3, 3, 32, 10.0);
    arch.embedding = EmbeddingConfig {
        dim: 8,
        width: 32,
        hidden_layers: 1,
    };
    let mut f = LagrangianField::new(&arch, DomainBox::symmetric(2, 4.0), (0.0, 1.2), 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    f.spectral_normalize(20);
    let (stack, p) = (f.stack(), f.params());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1000;
    let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-3.9..3.9));
    let t = Array2::from_shape_fn((n, 1), |_| rng.random_range(0.0..1.2));
    let emb = stack.embed(&Eager, p, &t.into_shared());
    let y = stack.forward(&Eager, p, &x.clone().into_shared(), &emb).to_owned();
    let back = stack.inverse(p, &y, &emb, InverseOptions::default()).unwrap();
    let round_trip = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut lipschitz: f64 = 0.0;
    let m = 10_000;
    let t = Array2::from_shape_fn((m, 1), |_| rng.random_range(0.0..1.2));
    let emb = stack.embed(&Eager, p, &t.into_shared());
    for layer in stack.layers() {
        let Layer::Residual(block) = layer else { continue };
        let a = Array2::from_shape_fn((m, 2), |_| rng.random_range(-4.0..4.0));
        let b = &a + &Array2::from_shape_fn((m, 2), |_| rng.random_range(-0.5..0.5));
        let ha = block.residual(&Eager, p, &a.clone().into_shared(), &emb);
        let hb = block.residual(&Eager, p, &b.clone().into_shared(), &emb);
        for r in 0..m {
            let num = dist(&[ha[[r, 0]], ha[[r, 1]]], &[hb[[r, 0]], hb[[r, 1]]]);
            let den = dist(&[a[[r, 0]], a[[r, 1]]], &[b[[r, 0]], b[[r, 1]]]);
            if den > 0.0 {
                lipschitz = lipschitz.max(num / den);
            }
        }
    }
    report(
        "inversion",
        round_trip <= 1e-8 && lipschitz < 1.0,
        format!("round trip {round_trip:.2e} at {n} points (<= 1e-8), residual Lipschitz estimate {lipschitz:.3} (< 1)"),
        start,
        minutes(2),
    );
}

#[test]
fn solver_orders() {
    let start = Instant::now();
    let o5 = order_check(Method::Dp5).unwrap();
    let o8 = order_check(Method::Dp8).unwrap();
    let mut decay_err: f64 = 0.0;
    for method in [Method::Dp5, Method::Dp8] {
        let cfg = SolverConfig {
            method,
            rtol: 1e-8,
            atol: 1e-8,
            ..SolverConfig::default()
        };
        let r = integrate(
            |_, y, out| {
                out[0] = -y[0];
                Ok(())
            },
            &[1.0],
            0.0,
            1.0,
            &cfg,
        )
        .unwrap();
        decay_err = decay_err.max((r.y[0] - (-1f64).exp()).abs());
    }
    report(
        "solver orders",
        (o5 - 5.0).abs() <= 0.3 && (o8 - 8.0).abs() <= 0.5 && decay_err <= 1e-7,
        format!("dp5 order {o5:.2}, dp8 order {o8:.2}, |y(1) - 1/e| = {decay_err:.1e} at tol 1e-8"),
        start,
        Duration::from_secs(10),
    );
}

fn brute_force_w2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    fn go(k: usize, used: &mut [bool], acc: f64, a: &Array2<f64>, b: &Array2<f64>, best: &mut f64) {
        let n = a.nrows();
        if k == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                let c: f64 = a.row(k).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y).powi(2)).sum();
                go(k + 1, used, acc + c, a, b, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; a.nrows()], 0.0, a, b, &mut best);
    best / a.nrows() as f64
}

#[test]
fn discrete_transport_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut brute_err: f64 = 0.0;
    for k in 0..100 {
        let n = 1 + k % 7;
        let d = 1 + k % 3;
        let a = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let b = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let exact = brute_force_w2(&a, &b);
        brute_err = brute_err.max((discrete_w2(&a, &b).unwrap() - exact).abs() / exact.max(1e-12));
    }
    let g0 = Gaussian::isotropic(vec![0.0, 0.0], 1.0).unwrap();
    let g1 = Gaussian::isotropic(vec![3.0, 0.0], 1.0).unwrap();
    let reference = gaussian_w2(&g0, &g1).unwrap();
    let est = discrete_w2(&g0.sample(2000, &mut rng), &g1.sample(2000, &mut rng)).unwrap();
    let rel = (est - reference).abs() / reference;
    report(
        "discrete transport",
        brute_err <= 1e-9 && (reference - 9.0).abs() < 1e-12 && rel <= 0.05,
        format!("brute force mismatch {brute_err:.1e} over 100 instances, n=2000 estimate {est:.3} vs {reference} (rel {rel:.3} <= 0.05)"),
        start,
        minutes(5),
    );
}

#[test]
fn dynamic_transport_between_gaussians() {
    let start = Instant::now();
    let g0 = Gaussian::isotropic(vec![-1.5, 0.0], 0.25).unwrap();
    let g1 = Gaussian::isotropic(vec![1.5, 0.0], 0.25).unwrap();
    let reference = gaussian_w2(&g0, &g1).unwrap();
    let (p0, p1) = (Endpoint::Gaussian(g0), Endpoint::Gaussian(g1));
    let mut arch = ArchitectureConfig::standard(3, 3, 32, 5.0);
    arch.embedding = EmbeddingConfig {
        dim: 8,
        width: 32,
        hidden_layers: 1,
    };
    let field = LagrangianField::new(&arch, DomainBox::symmetric(2, 4.0), (0.0, 1.0), 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let schedule = TrainSchedule {
        epochs: 20,
        steps_per_epoch: 50,
        learning_rate: 3e-3,
        ..TrainSchedule::default()
    };
    let weights = LossWeights {
        ot_kinetic: 1e-3,
        mass: 0.0,
        ..LossWeights::default()
    };
    let sampling = OtSampling {
        n_space: 256,
        endpoint_uniform: 0.5,
        ..OtSampling::default()
    };
    let mut trainer = Trainer::new(field, arch, schedule, weights).unwrap();
    trainer
        .fit(
            &Objective::Transport {
                p0: &p0,
                p1: &p1,
                sampling: &sampling,
            },
            None,
        )
        .unwrap();
    let field = trainer.field;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let source = p0.sample(2000, &mut rng).unwrap();
    let inside: Vec<usize> = (0..source.nrows()).filter(|&i| field.domain().contains(&source.row(i).to_vec())).collect();
    let source = source.select(ndarray::Axis(0), &inside);
    let moved = transport_samples(&field, &source, 0.0, 1.0).unwrap();
    let w2 = empirical_w2(&source, &moved).unwrap();
    let rel = (w2 - reference).abs() / reference;

    let eval = OtSampling {
        n_space: 2000,
        ..sampling
    };
    let batch = OtBatch::sample(&p0, &p1, field.domain(), (0.0, 1.0), &eval, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let mut endpoint_mse = Vec::new();
    for (t, x, target) in [(0.0, &batch.x0, &batch.target0), (1.0, &batch.x1, &batch.target1)] {
        let pred: Vec<f64> = field.log_density_batch(&array![[t]], x).unwrap().into_iter().map(f64::exp).collect();
        endpoint_mse.push(mse(&pred, target.as_slice().unwrap()).unwrap());
    }
    report(
        "dynamic transport",
        rel <= 0.1 && endpoint_mse.iter().all(|&m| m < 8e-5),
        format!(
            "W2 {w2:.3} vs {reference} (rel {rel:.3} <= 0.1), endpoint raw MSE {:.1e} / {:.1e} (< 8e-5)",
            endpoint_mse[0], endpoint_mse[1]
        ),
        start,
        minutes(45),
    );
}

fn fluid_residual(gt: &FluidGroundTruth, t: f64, x: &[f64]) -> f64 {
    let h = 1e-6;
    let dt = (gt.density(t + h, x).unwrap() - gt.density(t - h, x).unwrap()) / (2.0 * h);
    let mut div = 0.0;
    for j in 0..2 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = gt.density(t, &xp).unwrap() * gt.velocity(t, &xp).unwrap()[j];
        let fm = gt.density(t, &xm).unwrap() * gt.velocity(t, &xm).unwrap()[j];
        div += (fp - fm) / (2.0 * h);
    }
    dt + div
}

#[test]
fn generator_is_self_consistent() {
    let start = Instant::now();
    let gt = FluidGroundTruth::new(FluidConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut ce, mut identity, mut round_trip): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..500 {
        let t = rng.random_range(0.01..1.19);
        let x = if k % 5 == 0 {
            let m = gt.config().means[rng.random_range(0..gt.config().means.len())];
            gt.flow_map(t, &[m[0] + rng.random_range(-0.2..0.2), m[1] + rng.random_range(-0.2..0.2)]).unwrap()
        } else {
            vec![rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5)]
        };
        let rho = gt.density(t, &x).unwrap();
        ce = ce.max(fluid_residual(&gt, t, &x).abs() / (1e-4 * (1.0 + rho)));
        identity = identity.max(dist(&gt.flow_map(0.0, &x).unwrap(), &x));
        let back = gt.flow_map(t, &gt.flow_map_inverse(t, &x).unwrap()).unwrap();
        round_trip = round_trip.max(dist(&back, &x));
    }
    let (grid, cell) = midpoint_grid(1024, 4.0);
    let mut mass_err: f64 = 0.0;
    for t in [0.0, 0.4, 0.8, 1.2] {
        let mass: f64 = grid.rows().into_iter().map(|x| gt.density(t, x.as_slice().unwrap()).unwrap()).sum::<f64>() * cell;
        mass_err = mass_err.max((mass - 1.0).abs());
    }
    report(
        "generator consistency",
        ce <= 1.0 && identity <= 1e-14 && round_trip <= 1e-10 && mass_err <= 1e-3,
        format!(
            "residual / 1e-4(1+rho) {ce:.3}, identity at t=0 {identity:.1e}, inverse round trip {round_trip:.1e}, mass error {mass_err:.1e}"
        ),
        start,
        minutes(2),
    );
}
