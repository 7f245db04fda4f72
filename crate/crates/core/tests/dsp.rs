mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use espcsi::dsp::{
    align_packet_phase, beamformer_spectrum, estimate_aoa, extract_features, interpolate_csi, rssi_weight, AoaConfig,
    FeatureConfig, InterpolationConfig,
};
use espcsi::synth::{channel_response, generate_dataset, ImpairmentSpec, PathSpec, TrajectorySpec};
use espcsi::{AntennaIndex, ArraySystem, BoardPose, CsiDatapoint, CsiTensor, Vec3, SPEED_OF_LIGHT};

fn one_board() -> ArraySystem {
    ArraySystem::with_boards(vec![BoardPose::facing(Vec3::zeros(), Vec3::x()).unwrap()]).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, boards: usize, n_sub: usize) -> CsiTensor {
    let data = (0..boards * 8 * n_sub)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    CsiTensor::from_vec(boards, n_sub, data).unwrap()
}

fn rms(v: &[Complex64]) -> f64 {
    (v.iter().map(|c| c.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

/// Plane wave from azimuth `theta` on board 0, spherical spreading ignored.
fn plane_wave(system: &ArraySystem, theta: f64) -> CsiTensor {
    let pose = &system.boards()[0];
    let dir = pose.normal() * theta.cos() + pose.col_axis * theta.sin();
    let mut h = CsiTensor::for_system(system);
    for a in 0..8 {
        let idx = AntennaIndex::from_flat(a);
        let p = system.antenna_position(0, idx.row, idx.col).unwrap() - pose.center;
        for n in 0..system.n_subcarriers() {
            let k = 2.0 * PI * system.subcarrier_frequency(n).unwrap() / SPEED_OF_LIGHT;
            h.set(idx, n, Complex64::cis(k * dir.dot(&p)));
        }
    }
    h
}

#[test]
fn rssi_weight_examples() {
    let system = one_board();
    let mut h = plane_wave(&system, 0.3);
    let unchanged = rssi_weight(&h, &[0.0; 8]).unwrap();
    for (a, b) in unchanged.as_slice().iter().zip(h.as_slice()) {
        assert!((a - b).norm() < 1e-12);
    }
    let mut p = [0.0; 8];
    p[5] = 20.0;
    let w = rssi_weight(&h, &p).unwrap();
    assert!((rms(w.antenna(5)) - 10.0).abs() < 1e-12);
    assert!((rms(w.antenna(4)) - 1.0).abs() < 1e-12);
    h.antenna_mut(2).fill(Complex64::new(0.0, 0.0));
    assert!(rssi_weight(&h, &[0.0; 8]).is_err());
    assert!(rssi_weight(&h, &[0.0; 7]).is_err());
}

#[test]
fn alignment_of_static_packets_with_common_phase() {
    let system = one_board();
    let traj = TrajectorySpec {
        waypoints: vec![[3.0, 1.0, 0.0], [3.0, 1.0, 0.0]],
        speed: 1.0,
        packet_rate: 10.0,
        start_time: 0.0,
        packet_count: Some(20),
    };
    let spec = ImpairmentSpec {
        common_phase: true,
        ..ImpairmentSpec::none()
    };
    let paths = vec![PathSpec::line_of_sight(Complex64::new(1.0, 0.0))];
    let ds = generate_dataset(&system, &traj, &paths, &spec, 12).unwrap();
    let reference = AntennaIndex::new(0, 1, 2);
    let first = align_packet_phase(&ds.points()[0].h, reference).unwrap();
    assert!(ds.points()[0].h != ds.points()[1].h);
    for p in ds.points() {
        let aligned = align_packet_phase(&p.h, reference).unwrap();
        for (a, b) in aligned.as_slice().iter().zip(first.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
        let m: Complex64 = aligned.antenna(reference.flat()).iter().sum();
        assert!(m.im.abs() < 1e-12 * m.norm() && m.re > 0.0);
    }
    assert!(align_packet_phase(&first, AntennaIndex::new(1, 0, 0)).is_err());
}

#[test]
fn interpolation_of_identical_packets() {
    let system = one_board();
    let h = channel_response(
        &system,
        &Vec3::new(2.0, 0.5, 0.0),
        &[PathSpec::line_of_sight(Complex64::new(1.0, 0.0))],
    )
    .unwrap();
    let aligned = align_packet_phase(&h, AntennaIndex::default()).unwrap();
    let config = InterpolationConfig::default();
    let window: Vec<CsiDatapoint> = (0..40)
        .map(|l| CsiDatapoint {
            h: h.clone(),
            p: vec![0.0; 8],
            x: Vec3::zeros(),
            t: -0.3 + l as f64 * 0.015,
        })
        .collect();
    let out = interpolate_csi(&window, 0.0, &config).unwrap();
    for (a, b) in out.as_slice().iter().zip(aligned.as_slice()) {
        assert!((a - b).norm() < 1e-12);
    }
    let single = interpolate_csi(&window[10..11], window[10].t, &config).unwrap();
    assert_eq!(single, aligned);
    // outside the kernel support
    assert!(interpolate_csi(&window, 5.0, &config).is_err());
    assert!(interpolate_csi(&[], 0.0, &config).is_err());
}

#[test]
fn feature_examples() {
    let mut h = CsiTensor::zeros(1, 64);
    h.as_mut_slice().fill(Complex64::new(1.0, 0.0));
    let raw = FeatureConfig {
        n_taps: 64,
        normalize: false,
        alignment_reference: None,
        ..FeatureConfig::default()
    };
    let f = extract_features(&h, &raw).unwrap();
    let n_values = 8 * 64;
    for a in 0..8 {
        for tap in 0..64 {
            let expected = if tap == 0 { 1.0 } else { 0.0 };
            assert!((f[a * 64 + tap] - expected).abs() < 1e-12);
            assert!(f[n_values + a * 64 + tap].abs() < 1e-12);
        }
    }

    let k = 5;
    for (n, v) in h.antenna_mut(3).iter_mut().enumerate() {
        *v = Complex64::cis(-2.0 * PI * (k * n) as f64 / 64.0);
    }
    let f = extract_features(&h, &raw).unwrap();
    assert!((f[3 * 64 + k] - 1.0).abs() < 1e-12);
    let energy: f64 = (0..64)
        .map(|t| f[3 * 64 + t].powi(2) + f[n_values + 3 * 64 + t].powi(2))
        .sum();
    assert!((energy - 1.0).abs() < 1e-12);

    let four = CsiTensor::zeros(4, 117);
    assert_eq!(FeatureConfig::default().feature_len(4), 1024);
    let mut ones = four.clone();
    ones.as_mut_slice().fill(Complex64::new(0.5, 0.5));
    assert_eq!(extract_features(&ones, &FeatureConfig::default()).unwrap().len(), 1024);
    assert!(extract_features(&four, &FeatureConfig::default()).is_err());
    let too_many = FeatureConfig {
        n_taps: 118,
        ..FeatureConfig::default()
    };
    assert!(extract_features(&ones, &too_many).is_err());
}

#[test]
fn features_with_all_taps_determine_the_channel() {
    // with every tap kept, inverting the DFT by brute force recovers h
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = random_tensor(&mut rng, 1, 12);
    let raw = FeatureConfig {
        n_taps: 12,
        normalize: false,
        alignment_reference: None,
        ..FeatureConfig::default()
    };
    let f = extract_features(&h, &raw).unwrap();
    let n_values = 8 * 12;
    for a in 0..8 {
        for n in 0..12 {
            let mut v = Complex64::new(0.0, 0.0);
            for t in 0..12 {
                let tap = Complex64::new(f[a * 12 + t], f[n_values + a * 12 + t]);
                v += tap * Complex64::cis(-2.0 * PI * (t * n) as f64 / 12.0);
            }
            assert!((v - h.antenna(a)[n]).norm() < 1e-12);
        }
    }
}

#[test]
fn aoa_broadside_and_oblique() {
    let system = one_board();
    let los = [PathSpec::line_of_sight(Complex64::new(1.0, 0.0))];
    let config = AoaConfig::default();
    let h = channel_response(&system, &Vec3::new(20.0, 0.0, 0.0), &los).unwrap();
    assert!(estimate_aoa(&h, &system, 0, &config).unwrap().abs() < 1e-3);

    let pose = &system.boards()[0];
    let theta = 30f64.to_radians();
    let tx = pose.center + (pose.normal() * theta.cos() + pose.col_axis * theta.sin()) * 50.0;
    let h = channel_response(&system, &tx, &los).unwrap();
    let est = estimate_aoa(&h, &system, 0, &config).unwrap();
    let oracle = common::oracle_aoa(&h, &system, 0, 0.01);
    assert!((est - oracle).abs() < 0.5f64.to_radians(), "{est} vs {oracle}");
    assert!((est - theta).abs() < 1f64.to_radians());

    assert!(estimate_aoa(&CsiTensor::for_system(&system), &system, 0, &config).is_err());
    assert!(estimate_aoa(&h, &system, 1, &config).is_err());
}

#[test]
fn two_coherent_paths_return_global_grid_maximum() {
    let system = one_board();
    let mut h = plane_wave(&system, 40f64.to_radians());
    for (a, b) in h
        .as_mut_slice()
        .iter_mut()
        .zip(plane_wave(&system, -40f64.to_radians()).as_slice())
    {
        *a += b;
    }
    let config = AoaConfig::default();
    let grid = config.grid().unwrap();
    let oracle: Vec<f64> = grid
        .iter()
        .map(|&t| common::oracle_beam_power(&h, &system, 0, t))
        .collect();
    let spectrum = beamformer_spectrum(&h, &system, 0, &grid).unwrap();
    for (a, b) in spectrum.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    let max = oracle.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // symmetric paths tie up to rounding; any maximal grid point is acceptable
    let est = estimate_aoa(&h, &system, 0, &config).unwrap();
    let nearest = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - est).abs().total_cmp(&(b.1 - est).abs()))
        .unwrap()
        .0;
    assert!((est - grid[nearest]).abs() <= 0.5 * config.step_deg.to_radians() + 1e-12);
    assert!(
        oracle[nearest] >= max * (1.0 - 1e-9),
        "{} at {}",
        oracle[nearest],
        est.to_degrees()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rssi_weight_reproduces_rms(seed in any::<u64>(), p in proptest::collection::vec(-40.0..40.0f64, 16)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_tensor(&mut rng, 2, 9);
        let w = rssi_weight(&h, &p).unwrap();
        for (a, &rssi) in p.iter().enumerate() {
            let target = 10f64.powf(rssi / 20.0);
            prop_assert!((rms(w.antenna(a)) - target).abs() <= 1e-12 * target);
            for (x, y) in w.antenna(a).iter().zip(h.antenna(a)) {
                prop_assert!(wrap(x.arg() - y.arg()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn alignment_ignores_global_phase(seed in any::<u64>(), phi in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_tensor(&mut rng, 1, 7);
        let reference = AntennaIndex::new(0, rng.random_range(0..2), rng.random_range(0..4));
        let a = align_packet_phase(&h, reference).unwrap();
        let b = align_packet_phase(&h.scaled(Complex64::cis(phi)), reference).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).norm() < 1e-12);
        }
        // relative phases untouched
        let ratio = h.as_slice()[3] * h.as_slice()[9].conj();
        let aligned_ratio = a.as_slice()[3] * a.as_slice()[9].conj();
        prop_assert!((ratio - aligned_ratio).norm() < 1e-12);
    }

    #[test]
    fn interpolation_ignores_per_packet_phase(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window: Vec<CsiDatapoint> = (0..6)
            .map(|l| CsiDatapoint {
                h: random_tensor(&mut rng, 1, 5),
                p: (0..8).map(|_| rng.random_range(-10.0..10.0)).collect(),
                x: Vec3::zeros(),
                t: l as f64 * 0.05,
            })
            .collect();
        let rotated: Vec<CsiDatapoint> = window
            .iter()
            .map(|p| CsiDatapoint { h: p.h.scaled(Complex64::cis(rng.random_range(-PI..PI))), ..p.clone() })
            .collect();
        for rssi_weighting in [false, true] {
            let config = InterpolationConfig { rssi_weighting, ..InterpolationConfig::default() };
            let a = interpolate_csi(&window, 0.12, &config).unwrap();
            let b = interpolate_csi(&rotated, 0.12, &config).unwrap();
            let c = b.as_slice()[0] / a.as_slice()[0];
            prop_assert!((c.norm() - 1.0).abs() < 1e-10);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x * c - y).norm() < 1e-10 * x.norm().max(1.0));
            }
        }
    }

    #[test]
    fn features_ignore_common_phase(seed in any::<u64>(), phi in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_tensor(&mut rng, 2, 16);
        let config = FeatureConfig { n_taps: 4, ..FeatureConfig::default() };
        let a = extract_features(&h, &config).unwrap();
        let b = extract_features(&h.scaled(Complex64::cis(phi)), &config).unwrap();
        prop_assert_eq!(a.len(), config.feature_len(2));
        let norm: f64 = a.iter().map(|v| v * v).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aoa_invariant_to_phase_and_scale(seed in any::<u64>(), phi in -PI..PI, scale in 1e-3..1e3f64) {
        let system = one_board();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tx = Vec3::new(rng.random_range(1.0..10.0), rng.random_range(-5.0..5.0), 0.0);
        let h = channel_response(&system, &tx, &[PathSpec::line_of_sight(Complex64::new(1.0, 0.0))]).unwrap();
        let config = AoaConfig { step_deg: 1.0, ..AoaConfig::default() };
        let grid = config.grid().unwrap();
        let argmax = |h: &CsiTensor| {
            let s = beamformer_spectrum(h, &system, 0, &grid).unwrap();
            (0..s.len()).max_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap()
        };
        let g = h.scaled(Complex64::from_polar(scale, phi));
        prop_assert_eq!(argmax(&h), argmax(&g));
        let a = estimate_aoa(&h, &system, 0, &config).unwrap();
        let b = estimate_aoa(&g, &system, 0, &config).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

fn wrap(phi: f64) -> f64 {
    (phi + PI).rem_euclid(2.0 * PI) - PI
}
