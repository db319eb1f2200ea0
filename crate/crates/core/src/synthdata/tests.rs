use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn gt2() -> FluidGroundTruth {
    FluidGroundTruth::new(FluidConfig::default()).unwrap()
}

fn gt3() -> FluidGroundTruth {
    FluidGroundTruth::new(FluidConfig {
        dim: 3,
        ..FluidConfig::default()
    })
    .unwrap()
}

/// Straight matrix form of the flow map, written independently of the library.
fn reference_map(t: f64, x0: [f64; 2]) -> [f64; 2] {
    let a = 2.0 * PI * t;
    let rot = [[a.cos(), -a.sin()], [a.sin(), a.cos()]];
    let sc = 1.0 + 0.1 * t;
    let m = [
        [sc * rot[0][0], sc * rot[0][1]],
        [sc * rot[1][0], sc * rot[1][1]],
    ];
    let s = (PI * t).sin();
    let u = [4.0 * (0.25 * x0[0]).atanh() + 0.6 * s, 4.0 * (0.25 * x0[1]).atanh() - 0.6 * s];
    let k = (0.5 * t + 1.0) / 4.0;
    [
        4.0 * (k * (m[0][0] * u[0] + m[0][1] * u[1])).tanh(),
        4.0 * (k * (m[1][0] * u[0] + m[1][1] * u[1])).tanh(),
    ]
}

#[test]
fn identity_at_time_zero() {
    let gt = gt2();
    for x in [[0.0, 0.0], [1.5, -2.0], [-3.9, 3.5]] {
        let y = gt.flow_map(0.0, &x).unwrap();
        assert!((y[0] - x[0]).abs() < 1e-14 && (y[1] - x[1]).abs() < 1e-14);
    }
}

#[test]
fn flow_map_matches_reference() {
    let gt = gt2();
    // Half a turn: the origin is shifted by (0.6, −0.6), rotated by π and scaled.
    let y = gt.flow_map(0.5, &[0.0, 0.0]).unwrap();
    let k = 1.25 / 4.0 * 1.05;
    assert!((y[0] - 4.0 * (-k * 0.6f64).tanh()).abs() < 1e-13, "{y:?}");
    assert!((y[1] - 4.0 * (k * 0.6f64).tanh()).abs() < 1e-13, "{y:?}");
    for (t, x) in [(0.25, [1.0, -0.5]), (0.7, [-2.0, 3.0]), (1.2, [0.3, 0.1])] {
        let y = gt.flow_map(t, &x).unwrap();
        let r = reference_map(t, x);
        assert!((y[0] - r[0]).abs() < 1e-12 && (y[1] - r[1]).abs() < 1e-12);
    }
}

#[test]
fn mixture_peak_value() {
    let gt = gt2();
    let expected = 0.25 / (2.0 * PI * 0.01);
    let v = gt.initial_density(&[1.5, 0.0]);
    assert!((v - expected).abs() < 1e-10 * expected, "{v}");
    assert!(gt.density(0.0, &[3.99, -3.99]).unwrap() < 1e-10);
    assert_eq!(gt.initial_density(&[4.0, 0.0]), 0.0);
}

#[test]
fn out_of_domain_is_an_error() {
    let gt = gt2();
    assert!(matches!(gt.density(0.3, &[4.0, 0.0]), Err(Error::Domain { .. })));
    assert!(matches!(gt.velocity(0.3, &[0.0, -5.0]), Err(Error::Domain { .. })));
    assert!(FluidGroundTruth::new(FluidConfig {
        dim: 4,
        ..FluidConfig::default()
    })
    .is_err());
}

#[test]
fn density_has_unit_mass() {
    let gt = gt2();
    let n = 1024;
    let h = 8.0 / n as f64;
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [-4.0 + (i as f64 + 0.5) * h, -4.0 + (j as f64 + 0.5) * h];
            mass += gt.density(0.7, &x).unwrap() * h * h;
        }
    }
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn velocity_matches_finite_differences() {
    let gt = gt2();
    let h = 1e-5;
    for (t, x) in [(0.2, [0.5, 1.0]), (0.9, [-1.2, -2.0]), (1.1, [3.0, 0.2])] {
        let x0 = gt.flow_map_inverse(t, &x).unwrap();
        let a = gt.flow_map(t + h, &x0).unwrap();
        let b = gt.flow_map(t - h, &x0).unwrap();
        let v = gt.velocity(t, &x).unwrap();
        for k in 0..2 {
            let fd = (a[k] - b[k]) / (2.0 * h);
            assert!((v[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {fd}", v[k]);
        }
    }
}

fn continuity_residual(gt: &FluidGroundTruth, t: f64, x: &[f64]) -> f64 {
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
fn ground_truth_satisfies_continuity_equation() {
    let gt = gt2();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut pts = Vec::new();
    for _ in 0..400 {
        let t = rng.random_range(0.01..1.19);
        pts.push((t, vec![rng.random_range(-3.5..3.5), rng.random_range(-3.5..3.5)]));
    }
    // Points inside the moving blobs, where the density is large.
    for _ in 0..100 {
        let t = rng.random_range(0.01..1.19);
        let m = gt.config().means[rng.random_range(0..4)];
        let x0 = [m[0] + rng.random_range(-0.2..0.2), m[1] + rng.random_range(-0.2..0.2)];
        pts.push((t, gt.flow_map(t, &x0).unwrap()));
    }
    let mut large = 0;
    for (t, x) in pts {
        let rho = gt.density(t, &x).unwrap();
        large += (rho > 0.5) as usize;
        let r = continuity_residual(&gt, t, &x);
        assert!(r.abs() <= 1e-4 * (1.0 + rho), "t={t} x={x:?} rho={rho} residual={r}");
    }
    assert!(large > 50);
}

#[test]
fn isolated_rotation_and_shift() {
    let rotation_only = FluidGroundTruth::new(FluidConfig {
        scale_rate: 0.0,
        shift: 0.0,
        outer_rate: 0.0,
        ..FluidConfig::default()
    })
    .unwrap();
    let t = 0.3;
    let x = [1.2, -0.7];
    let a = -2.0 * PI * t;
    let w = [(x[0] / 4.0f64).atanh(), (x[1] / 4.0f64).atanh()];
    let expected = [
        4.0 * (a.cos() * w[0] - a.sin() * w[1]).tanh(),
        4.0 * (a.sin() * w[0] + a.cos() * w[1]).tanh(),
    ];
    let inv = rotation_only.flow_map_inverse(t, &x).unwrap();
    assert!((inv[0] - expected[0]).abs() < 1e-13 && (inv[1] - expected[1]).abs() < 1e-13);

    let shift_only = FluidGroundTruth::new(FluidConfig {
        rotation: 0.0,
        scale_rate: 0.0,
        outer_rate: 0.0,
        ..FluidConfig::default()
    })
    .unwrap();
    for t in [0.0, 0.3, 0.5, 1.1] {
        let v = shift_only.velocity(t, &x).unwrap();
        let rate = 0.6 * PI * (PI * t).cos();
        assert!((v[0] - (1.0 - x[0] * x[0] / 16.0) * rate).abs() < 1e-12);
        assert!((v[1] + (1.0 - x[1] * x[1] / 16.0) * rate).abs() < 1e-12);
    }
}

#[test]
fn third_axis_is_passive() {
    let gt = gt3();
    let x = [0.4, -0.3, 0.05];
    let v = gt.velocity(0.4, &x).unwrap();
    assert_eq!(v.len(), 3);
    assert_eq!(v[2], 0.0);
    assert_eq!(gt.flow_map(0.4, &x).unwrap()[2], 0.05);
    let expected = 0.25 * (2.0 * PI * 0.01f64).powf(-1.5);
    assert!((gt.initial_density(&[0.0, 2.5, 0.0]) - expected).abs() < 1e-9 * expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn inverse_round_trip(t in 0.0f64..1.2, x in -3.5f64..3.5, y in -3.5f64..3.5) {
        let gt = gt2();
        let x0 = gt.flow_map_inverse(t, &[x, y]).unwrap();
        let back = gt.flow_map(t, &x0).unwrap();
        prop_assert!((back[0] - x).abs() <= 1e-10 && (back[1] - y).abs() <= 1e-10);
    }
}

fn small_config() -> ObservationConfig {
    ObservationConfig {
        train_per_time: 40,
        val_per_time: 8,
        test_times: 6,
        test_per_time: 10,
        ..ObservationConfig::default()
    }
}

#[test]
fn observations_are_deterministic() {
    let cfg = small_config();
    let a = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let c = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.split(Split::Train).len(), 21 * 40);
    assert_eq!(a.split(Split::Val).len(), 21 * 8);
    assert_eq!(a.split(Split::Test).len(), 6 * 10);
}

#[test]
fn train_times_are_equidistant() {
    let cfg = small_config();
    let set = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let times = set.split(Split::Train).times();
    assert_eq!(times.len(), 21);
    for (k, t) in times.iter().enumerate() {
        assert_eq!(*t, k as f64 / 20.0);
    }
}

#[test]
fn noiseless_observations_are_exact_and_respect_regions() {
    let cfg = ObservationConfig {
        density_noise: 0.0,
        velocity_noise: 0.0,
        ..small_config()
    };
    let gt = gt2();
    let set = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut with_velocity = 0;
    for o in &set.observations {
        let rho = gt.density(o.t, &o.x).unwrap();
        assert_eq!(o.rho, Some(rho));
        assert_eq!(cfg.region(&o.x), o.split);
        match &o.velocity {
            Some(v) => {
                with_velocity += 1;
                assert!(rho > cfg.velocity_threshold);
                assert_eq!(v, &gt.velocity(o.t, &o.x).unwrap());
            }
            None => assert!(rho <= cfg.velocity_threshold),
        }
    }
    assert!(with_velocity > set.len() / 4);
}

#[test]
fn noise_has_expected_spread() {
    let cfg = ObservationConfig {
        density_fraction: 0.9,
        ..small_config()
    };
    let gt = gt2();
    let set = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    for o in &set.observations {
        let truth = gt.density(o.t, &o.x).unwrap();
        if truth > 1e-3 {
            let e = (o.rho.unwrap() / truth).ln();
            s += e;
            s2 += e * e;
            n += 1.0;
        }
    }
    let mean = s / n;
    let sd = (s2 / n - mean * mean).sqrt();
    assert!(n > 500.0);
    assert!(mean.abs() < 0.02 && (sd - 0.1).abs() < 0.015, "{mean} {sd}");
}

#[test]
fn csv_round_trip() {
    for dim in [2, 3] {
        let cfg = ObservationConfig {
            fluid: FluidConfig {
                dim,
                ..FluidConfig::default()
            },
            train_times: 3,
            ..small_config()
        };
        let set = ObservationSet::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let header = text.lines().next().unwrap();
        if dim == 2 {
            assert_eq!(header, "t,x,y,rho,vx,vy,split");
        } else {
            assert_eq!(header, "t,x,y,z,rho,vx,vy,vz,split");
        }
        assert_eq!(ObservationSet::read_csv(&buf[..]).unwrap(), set);
    }
}

#[test]
fn csv_rejects_bad_input() {
    assert!(ObservationSet::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    assert!(ObservationSet::read_csv("t,x,y,rho,vx,vy,split\n0,1,2,3,0.1,,train\n".as_bytes()).is_err());
    assert!(ObservationSet::read_csv("t,x,y,rho,vx,vy,split\n0,1,2,3,,,holdout\n".as_bytes()).is_err());
    let ok = ObservationSet::read_csv("t,x,y,rho,vx,vy,split\n0,1,2,,,,val\n".as_bytes()).unwrap();
    assert_eq!(ok.observations[0].rho, None);
    assert_eq!(ok.observations[0].velocity, None);
}

#[test]
fn config_rejects_unknown_keys() {
    let cfg = small_config();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: ObservationConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<ObservationConfig>(r#"{"train_timez": 3}"#).is_err());
    let bad = ObservationConfig {
        density_fraction: 1.5,
        ..small_config()
    };
    assert!(ObservationSet::generate(&bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn toy_densities_sample_inside_the_box() {
    for toy in ToyDensity::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = toy.sample(2000, &mut rng).unwrap();
        assert_eq!(s.dim(), (2000, 2));
        assert!(s.iter().all(|v| v.is_finite() && v.abs() < TOY_HALF_WIDTH), "{toy}");
        let again = toy.sample(2000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(s, again);
        assert_eq!(toy.name().parse::<ToyDensity>().unwrap(), toy);
    }
    assert!(ToyDensity::Moons.sample(0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    assert!("spiral".parse::<ToyDensity>().is_err());
}

#[test]
fn toy_density_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = ToyDensity::EightGaussians.sample(4000, &mut rng).unwrap();
    let sigma = 0.5 / 2f64.sqrt();
    let r = 2.0 * 2f64.sqrt();
    let near = s
        .rows()
        .into_iter()
        .filter(|p| {
            (0..8).any(|k| {
                let a = k as f64 * PI / 4.0;
                (p[0] - r * a.cos()).abs() <= 3.0 * sigma && (p[1] - r * a.sin()).abs() <= 3.0 * sigma
            })
        })
        .count();
    // Per-axis 3σ coverage of a Gaussian is 0.9973² ≈ 0.9946.
    assert!(near as f64 / 4000.0 > 0.99, "{near}");
    let s = ToyDensity::Circles.sample(4000, &mut rng).unwrap();
    for r in s.rows() {
        let rad = r[0].hypot(r[1]);
        assert!((rad - 1.0).abs() < 0.5 || (rad - 2.0).abs() < 0.5, "{rad}");
    }
}

