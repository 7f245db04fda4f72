use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use espcsi::charting::{
    batch_loss, cached_features, compute_features, sample_triplets, train_fcf, train_on_features, triplet_loss,
    ChartModel, TrainConfig, TripletConfig, TripletSampler,
};
use espcsi::dsp::FeatureConfig;
use espcsi::scene::{RingTrajectory, Scene};
use espcsi::synth::{generate_dataset, ImpairmentSpec};
use espcsi::{Dataset, Error};

fn ring(packets: usize, seed: u64) -> Dataset {
    let scene = Scene::reference();
    let ring = RingTrajectory {
        packet_count: packets,
        ..RingTrajectory::default()
    };
    generate_dataset(
        &scene.system,
        &ring.build().unwrap(),
        &scene.paths,
        &ImpairmentSpec::default(),
        seed,
    )
    .unwrap()
}

fn small_config(steps: usize, learning_rate: f64) -> TrainConfig {
    let mut config = TrainConfig::default();
    config.model.hidden_layers = vec![32, 16];
    config.triplet.steps = steps;
    config.triplet.batch_size = 32;
    config.triplet.learning_rate = learning_rate;
    config.triplet.tau_neg = 2.0;
    config
}

/// Output of the seed-0 reference network on the first noise-free packet
/// of the reference ring, recorded when the network was first built.
const GOLDEN: [u64; 2] = [13809517021972445247, 4591433356100312847];

#[test]
fn golden_forward_value() {
    let scene = Scene::reference();
    let traj = RingTrajectory::default().build().unwrap();
    let ds = generate_dataset(&scene.system, &traj, &scene.paths, &ImpairmentSpec::none(), 0).unwrap();
    let fc = FeatureConfig::default();
    let dims = vec![fc.feature_len(4), 128, 64, 32, 2];
    let model = ChartModel::init(dims, 0.01, fc, 0).unwrap();
    let y = model.forward(&ds.points()[0].h).unwrap();
    let again = ChartModel::init(model.layer_dims().to_vec(), 0.01, fc, 0)
        .unwrap()
        .forward(&ds.points()[0].h)
        .unwrap();
    assert_eq!(y.map(f64::to_bits), again.map(f64::to_bits));
    assert_eq!(y.map(f64::to_bits), GOLDEN, "{y:?} = {:?}", y.map(f64::to_bits));
}

#[test]
fn forward_ignores_common_phase() {
    let ds = ring(4, 1);
    let fc = FeatureConfig::default();
    let model = ChartModel::init(vec![fc.feature_len(4), 16, 2], 0.01, fc, 5).unwrap();
    for point in ds.points() {
        let y = model.forward(&point.h).unwrap();
        for phi in [0.3, -2.0, PI] {
            let z = model.forward(&point.h.scaled(Complex64::cis(phi))).unwrap();
            assert!((y[0] - z[0]).abs() < 1e-9 && (y[1] - z[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let ds = ring(300, 2);
    let config = small_config(20, 0.0);
    let (model, log) = train_fcf(&ds, &config).unwrap();
    let mut dims = vec![config.features.feature_len(4)];
    dims.extend(&config.model.hidden_layers);
    dims.push(2);
    let init = ChartModel::init(dims, config.model.leaky_slope, config.features, config.triplet.seed).unwrap();
    assert_eq!(model, init);
    assert_eq!(log.losses.len(), 20);
}

#[test]
fn first_batch_loss_decreases_after_hundred_steps() {
    let ds = ring(1000, 0);
    let config = TrainConfig {
        triplet: TripletConfig {
            steps: 100,
            ..TripletConfig::default()
        },
        ..TrainConfig::default()
    };
    let features = compute_features(ds.points(), &config.features, ds.system.n_subcarriers()).unwrap();
    let times = ds.timestamps();
    let first = sample_triplets(&times, &config.triplet, config.triplet.batch_size, 0).unwrap();
    let untrained = TrainConfig {
        triplet: TripletConfig {
            steps: 0,
            ..config.triplet.clone()
        },
        ..config.clone()
    };
    let (before, _) = train_on_features(features.view(), &times, &untrained).unwrap();
    let (after, log) = train_on_features(features.view(), &times, &config).unwrap();
    let l0 = batch_loss(&before, features.view(), &first, config.triplet.margin).unwrap();
    let l1 = batch_loss(&after, features.view(), &first, config.triplet.margin).unwrap();
    assert!((l0 - log.losses[0]).abs() < 1e-12);
    assert!(l1 < l0, "{l0} -> {l1}");
}

#[test]
fn training_is_deterministic() {
    let ds = ring(300, 3);
    let config = small_config(30, 3e-3);
    let (a, la) = train_fcf(&ds, &config).unwrap();
    let (b, lb) = train_fcf(&ds, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let mut other = config.clone();
    other.triplet.seed = 1;
    assert_ne!(train_fcf(&ds, &other).unwrap().0, a);
}

#[test]
fn training_failures() {
    let times: Vec<f64> = (0..50).map(|l| l as f64).collect();
    let mut features = Array2::zeros((50, 4));
    features.column_mut(1).fill(f64::NAN);
    let mut config = small_config(5, 1e-3);
    config.triplet.tau_pos = 2.0;
    config.triplet.tau_neg = 5.0;
    config.triplet.batch_size = 64;
    assert!(matches!(
        train_on_features(features.view(), &times, &config),
        Err(Error::Diverged { step: 0, .. })
    ));
    let flat = vec![3.0; 50];
    assert!(matches!(
        train_on_features(features.view(), &flat, &config),
        Err(Error::NoTriplets(_))
    ));
    let mut bad = config.clone();
    bad.triplet.tau_neg = 1.0;
    assert!(matches!(
        train_on_features(features.view(), &times, &bad),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn sampler_respects_windows_over_a_million_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut t = 0.0;
    let times: Vec<f64> = (0..3000)
        .map(|_| {
            // bursts and gaps
            t += if rng.random_bool(0.02) {
                rng.random_range(0.5..3.0)
            } else {
                rng.random_range(0.0..0.05)
            };
            t
        })
        .collect();
    let config = TripletConfig {
        tau_pos: 0.4,
        tau_neg: 2.5,
        seed: 99,
        ..TripletConfig::default()
    };
    let mut positives = 0usize;
    let mut histogram = [0usize; 4];
    for stream in 0..10 {
        for (a, p, n) in sample_triplets(&times, &config, 100_000, stream).unwrap() {
            let dp = (times[p] - times[a]).abs();
            assert!(p != a && dp > 0.0 && dp <= config.tau_pos, "positive {a} {p}");
            assert!((times[n] - times[a]).abs() > config.tau_neg, "negative {a} {n}");
            histogram[((dp / config.tau_pos * 4.0) as usize).min(3)] += 1;
            positives += 1;
        }
    }
    assert_eq!(positives, 1_000_000);
    assert!(histogram.iter().all(|&c| c > 0), "{histogram:?}");
}

#[test]
fn sampler_uniform_grid_example() {
    let times: Vec<f64> = (0..100).map(|l| l as f64 * 0.01).collect();
    let sampler = TripletSampler::new(&times, 0.025, 0.025).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10_000 {
        let (a, p, _) = sampler.sample(&mut rng);
        let d = (a as i64 - p as i64).abs();
        assert!((1..=2).contains(&d));
    }
}

#[test]
fn feature_cache_reuses_entries() {
    let ds = ring(50, 4);
    let dir = tempfile::tempdir().unwrap();
    let fc = FeatureConfig::default();
    let direct = compute_features(ds.points(), &fc, ds.system.n_subcarriers()).unwrap();
    let first = cached_features(&ds, &fc, dir.path()).unwrap();
    assert_eq!(first, direct);
    let entries = || std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(entries(), 1);
    assert_eq!(cached_features(&ds, &fc, dir.path()).unwrap(), direct);
    assert_eq!(entries(), 1);
    let other = FeatureConfig { n_taps: 8, ..fc };
    assert_eq!(
        cached_features(&ds, &other, dir.path()).unwrap().ncols(),
        other.feature_len(4)
    );
    assert_eq!(entries(), 2);
}

#[test]
fn model_file_round_trip_and_corruption() {
    let fc = FeatureConfig {
        n_taps: 4,
        ..FeatureConfig::default()
    };
    let model = ChartModel::init(vec![fc.feature_len(4), 8, 2], 0.01, fc, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fcf");
    model.save(&path, Some("abc".into())).unwrap();
    let (back, digest) = ChartModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(digest.as_deref(), Some("abc"));
    let bytes = std::fs::read(&path).unwrap();
    assert!(ChartModel::read(&mut &bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(ChartModel::read(&mut bad.as_slice()), Err(Error::BadMagic)));
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [-5.0..5.0f64, -5.0..5.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn triplet_loss_rigid_invariance(ya in point(), yp in point(), yn in point(), angle in -PI..PI, shift in point(), reflect in any::<bool>(), margin in 0.1..3.0f64) {
        let (s, c) = angle.sin_cos();
        let f = |y: [f64; 2]| {
            let y = if reflect { [y[0], -y[1]] } else { y };
            [c * y[0] - s * y[1] + shift[0], s * y[0] + c * y[1] + shift[1]]
        };
        let a = triplet_loss(ya, yp, yn, margin);
        let b = triplet_loss(f(ya), f(yp), f(yn), margin);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a));
    }

    #[test]
    fn triplet_loss_matches_single_precision_recomputation(ya in point(), yp in point(), yn in point(), margin in 0.1..3.0f64) {
        let d = |u: [f64; 2], v: [f64; 2]| {
            let (x, y) = ((u[0] - v[0]) as f32, (u[1] - v[1]) as f32);
            (x * x + y * y).sqrt()
        };
        let expected = (d(ya, yp) - d(ya, yn) + margin as f32).max(0.0);
        prop_assert!((triplet_loss(ya, yp, yn, margin) as f32 - expected).abs() < 1e-5 * (1.0 + expected));
    }

    #[test]
    fn finite_difference_gradient_on_toy_net(seed in any::<u64>()) {
        // [1, 2, 2, 2] layer dims: 4 + 6 = 10 parameters
        let fc = FeatureConfig::default();
        let mut model = ChartModel::init(vec![1, 2, 2], 0.01, fc, seed).unwrap();
        prop_assert_eq!(model.n_params(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut draw = |n| Array2::from_shape_fn((n, 1), |_| rng.random_range(-2.0..2.0));
        let (xa, xp, xn) = (draw(6), draw(6), draw(6));
        let (_, grads) = model.triplet_loss_and_grad(xa.view(), xp.view(), xn.view(), 1.0).unwrap();
        let analytic = grads.flatten();
        let base = model.params_flat();
        let eps = 1e-5;
        for i in 0..base.len() {
            let mut probe = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                model.set_params_flat(&p).unwrap();
                model.triplet_loss_and_grad(xa.view(), xp.view(), xn.view(), 1.0).unwrap().0
            };
            let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
            // the hinge and the leaky kink make the loss piecewise smooth;
            // skip probes that straddle a kink
            let (lo, hi) = (probe(-2.0 * eps), probe(2.0 * eps));
            let wide = (hi - lo) / (4.0 * eps);
            if (wide - numeric).abs() > 1e-6 * (1.0 + numeric.abs()) {
                continue;
            }
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
            prop_assert!(err <= 1e-4 || (analytic[i] - numeric).abs() < 1e-9, "param {}: {} vs {}", i, analytic[i], numeric);
        }
    }
}
