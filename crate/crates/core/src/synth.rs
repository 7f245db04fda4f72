//! Synthetic phase-coherent CSI.
//!
//! A geometric channel (line of sight plus single-bounce specular
//! reflections, image-source method) evaluated on the array's subcarrier
//! grid, followed by the impairments a passive WiFi sniffer sees: a random
//! common phase and timing offset per packet, constant per-board phase
//! offsets, receiver noise and jittered RSSI.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{ArraySystem, Vec3};
use crate::csi::{CsiDatapoint, CsiTensor, Dataset};
use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

const MIN_TX_DISTANCE: f64 = 1e-3;
const PLANE_EPS: f64 = 1e-9;

/// A reflecting plane, optionally limited to a vertical strip (a wall).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Mirror {
    point: Vec3,
    normal: Vec3,
    /// Unit direction along the wall and its half length, measured from `point`.
    extent: Option<(Vec3, f64)>,
}

/// Propagation path type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    LineOfSight,
    /// Infinite specular plane through `point` with normal `normal`.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
    /// Vertical wall of unbounded height between two floor-plan endpoints.
    Wall {
        a: [f64; 2],
        b: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    #[serde(flatten)]
    pub kind: PathKind,
    #[serde(default = "unit_gain")]
    pub gain: Complex64,
}

fn unit_gain() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

impl PathSpec {
    pub fn line_of_sight(gain: Complex64) -> Self {
        PathSpec {
            kind: PathKind::LineOfSight,
            gain,
        }
    }

    pub fn wall(a: [f64; 2], b: [f64; 2], gain: Complex64) -> Self {
        PathSpec {
            kind: PathKind::Wall { a, b },
            gain,
        }
    }

    pub fn plane(point: [f64; 3], normal: [f64; 3], gain: Complex64) -> Self {
        PathSpec {
            kind: PathKind::Plane { point, normal },
            gain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.norm() > 0.0 && self.gain.norm().is_finite()) {
            return Err(Error::config("path gain must be nonzero and finite"));
        }
        self.mirror().map(|_| ())
    }

    fn mirror(&self) -> Result<Option<Mirror>> {
        match &self.kind {
            PathKind::LineOfSight => Ok(None),
            PathKind::Plane { point, normal } => {
                let normal = Vec3::from(*normal);
                if !(normal.norm() > PLANE_EPS) || !normal.iter().all(|v| v.is_finite()) {
                    return Err(Error::degenerate("reflector plane normal is zero"));
                }
                Ok(Some(Mirror {
                    point: Vec3::from(*point),
                    normal: normal.normalize(),
                    extent: None,
                }))
            }
            PathKind::Wall { a, b } => {
                let a = Vec3::new(a[0], a[1], 0.0);
                let b = Vec3::new(b[0], b[1], 0.0);
                let along = b - a;
                let length = along.norm();
                if !(length > PLANE_EPS) || !length.is_finite() {
                    return Err(Error::degenerate("wall endpoints coincide"));
                }
                let along = along / length;
                Ok(Some(Mirror {
                    point: (a + b) / 2.0,
                    normal: Vec3::new(-along.y, along.x, 0.0),
                    extent: Some((along, length / 2.0)),
                }))
            }
        }
    }
}

impl Mirror {
    /// Length of the specular path tx -> plane -> rx, or `None` when the
    /// bounce point misses the wall or the endpoints face opposite sides.
    fn path_length(&self, tx: &Vec3, rx: &Vec3) -> Result<Option<f64>> {
        let dt = (tx - self.point).dot(&self.normal);
        let dr = (rx - self.point).dot(&self.normal);
        if dt.abs() < PLANE_EPS || dr.abs() < PLANE_EPS {
            return Err(Error::degenerate("endpoint lies on the reflecting plane"));
        }
        if dt.signum() != dr.signum() {
            return Ok(None);
        }
        let image = tx - self.normal * (2.0 * dt);
        if let Some((along, half_length)) = self.extent {
            // bounce point: where image -> rx crosses the plane
            let s = dr / (dr + dt);
            let bounce = rx + (image - rx) * s;
            if (bounce - self.point).dot(&along).abs() > half_length {
                return Ok(None);
            }
        }
        Ok(Some((image - rx).norm()))
    }
}

/// Impairment-free channel coefficients for a transmitter at `tx`:
/// each path contributes `gain / d * exp(-j 2 pi f_n d / c0)`.
pub fn channel_response(system: &ArraySystem, tx: &Vec3, paths: &[PathSpec]) -> Result<CsiTensor> {
    let antennas = system.antenna_positions();
    let freqs = system.subcarrier_frequencies();
    let mirrors = paths
        .iter()
        .map(|p| {
            p.validate()?;
            p.mirror()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut h = CsiTensor::for_system(system);
    for (flat, rx) in antennas.iter().enumerate() {
        if (rx - tx).norm() <= MIN_TX_DISTANCE {
            return Err(Error::degenerate(format!(
                "transmitter within {MIN_TX_DISTANCE} m of antenna {flat}"
            )));
        }
        let row = h.antenna_mut(flat);
        for (path, mirror) in paths.iter().zip(&mirrors) {
            let d = match mirror {
                None => (rx - tx).norm(),
                Some(m) => match m.path_length(tx, rx)? {
                    Some(d) => d,
                    None => continue,
                },
            };
            let amplitude = path.gain / d;
            for (coef, f) in row.iter_mut().zip(&freqs) {
                *coef += amplitude * Complex64::cis(-2.0 * PI * f * d / SPEED_OF_LIGHT);
            }
        }
    }
    Ok(h)
}

/// RSSI reported per antenna: `10 log10(mean |h|^2) + calibration + jitter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssiModel {
    #[serde(default)]
    pub calibration_db: f64,
    #[serde(default = "default_rssi_jitter")]
    pub jitter_std_db: f64,
}

fn default_rssi_jitter() -> f64 {
    0.5
}

impl Default for RssiModel {
    fn default() -> Self {
        RssiModel {
            calibration_db: 0.0,
            jitter_std_db: default_rssi_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentSpec {
    /// Uniform random phase shared by all antennas of a packet.
    pub common_phase: bool,
    /// Std of the per-packet symbol timing offset, seconds.
    pub timing_offset_std: f64,
    /// Constant phase per board in radians; empty means none.
    pub board_phase_offsets: Vec<f64>,
    /// Per-antenna SNR in dB; `None` disables receiver noise.
    pub snr_db: Option<f64>,
    pub rssi: RssiModel,
}

impl Default for ImpairmentSpec {
    fn default() -> Self {
        ImpairmentSpec {
            common_phase: true,
            timing_offset_std: 1e-9,
            board_phase_offsets: Vec::new(),
            snr_db: Some(25.0),
            rssi: RssiModel::default(),
        }
    }
}

impl ImpairmentSpec {
    /// Every impairment disabled, RSSI jitter included.
    pub fn none() -> Self {
        ImpairmentSpec {
            common_phase: false,
            timing_offset_std: 0.0,
            board_phase_offsets: Vec::new(),
            snr_db: None,
            rssi: RssiModel {
                calibration_db: 0.0,
                jitter_std_db: 0.0,
            },
        }
    }

    pub fn validate(&self, system: &ArraySystem) -> Result<()> {
        if !(self.timing_offset_std >= 0.0 && self.timing_offset_std.is_finite()) {
            return Err(Error::config("timing_offset_std must be finite and >= 0"));
        }
        if !self.board_phase_offsets.is_empty() && self.board_phase_offsets.len() != system.n_boards() {
            return Err(Error::config(format!(
                "{} board phase offsets for {} boards",
                self.board_phase_offsets.len(),
                system.n_boards()
            )));
        }
        if !self.board_phase_offsets.iter().all(|v| v.is_finite()) {
            return Err(Error::config("board phase offsets must be finite"));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::config("snr_db must be finite"));
            }
        }
        if !self.rssi.calibration_db.is_finite()
            || !(self.rssi.jitter_std_db >= 0.0 && self.rssi.jitter_std_db.is_finite())
        {
            return Err(Error::config("RSSI model parameters must be finite, jitter >= 0"));
        }
        Ok(())
    }
}

/// Piecewise-linear transmitter motion at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub waypoints: Vec<[f64; 3]>,
    /// m/s
    pub speed: f64,
    /// packets/s
    pub packet_rate: f64,
    #[serde(default)]
    pub start_time: f64,
    /// Number of packets. When unset, one traversal of the polyline; when
    /// set, the polyline is traversed cyclically.
    #[serde(default)]
    pub packet_count: Option<usize>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::config("trajectory needs at least two waypoints"));
        }
        if !self.waypoints.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::config("trajectory waypoints must be finite"));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::config("trajectory speed must be positive"));
        }
        if !(self.packet_rate > 0.0 && self.packet_rate.is_finite()) {
            return Err(Error::config("packet_rate must be positive"));
        }
        if !self.start_time.is_finite() {
            return Err(Error::config("start_time must be finite"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (Vec3::from(w[1]) - Vec3::from(w[0])).norm())
            .sum()
    }

    pub fn packet_count(&self) -> usize {
        self.packet_count
            .unwrap_or_else(|| (self.length() / self.speed * self.packet_rate).floor() as usize + 1)
    }

    pub fn packet_time(&self, k: usize) -> f64 {
        self.start_time + k as f64 / self.packet_rate
    }

    /// Position after travelling `distance` meters, wrapping around the
    /// polyline when the distance exceeds its length.
    pub fn position_at_distance(&self, distance: f64) -> Vec3 {
        let total = self.length();
        let first = Vec3::from(self.waypoints[0]);
        if total <= 0.0 {
            return first;
        }
        let mut remaining = distance.rem_euclid(total);
        if remaining == 0.0 && distance > 0.0 {
            remaining = total;
        }
        for w in self.waypoints.windows(2) {
            let (a, b) = (Vec3::from(w[0]), Vec3::from(w[1]));
            let seg = (b - a).norm();
            if remaining <= seg && seg > 0.0 {
                return a + (b - a) * (remaining / seg);
            }
            remaining -= seg;
        }
        Vec3::from(*self.waypoints.last().expect("validated"))
    }

    pub fn position_at_time(&self, t: f64) -> Vec3 {
        self.position_at_distance((t - self.start_time) * self.speed)
    }
}

/// Seed-derived generator for packet `k`; independent of evaluation order.
pub(crate) fn packet_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Applies the impairment chain to one clean channel realization.
pub fn impair(
    system: &ArraySystem,
    clean: &CsiTensor,
    impairments: &ImpairmentSpec,
    rng: &mut impl Rng,
) -> (CsiTensor, Vec<f64>) {
    let freqs = system.subcarrier_frequencies();
    let mut h = clean.clone();

    let common = if impairments.common_phase {
        Complex64::cis(rng.random::<f64>() * 2.0 * PI)
    } else {
        Complex64::new(1.0, 0.0)
    };
    let delay = if impairments.timing_offset_std > 0.0 {
        impairments.timing_offset_std * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let slope: Vec<Complex64> = freqs
        .iter()
        .map(|f| {
            if delay != 0.0 {
                common * Complex64::cis(-2.0 * PI * f * delay)
            } else {
                common
            }
        })
        .collect();

    let per_board = 8 * system.n_subcarriers();
    for (b, board) in h.as_mut_slice().chunks_mut(per_board).enumerate() {
        let offset = impairments
            .board_phase_offsets
            .get(b)
            .map_or(Complex64::new(1.0, 0.0), |&psi| Complex64::cis(psi));
        for antenna in board.chunks_mut(system.n_subcarriers()) {
            for (coef, s) in antenna.iter_mut().zip(&slope) {
                *coef *= s * offset;
            }
        }
    }

    if let Some(snr_db) = impairments.snr_db {
        let snr = 10f64.powf(snr_db / 10.0);
        for (antenna, clean_antenna) in h.antennas_mut().zip(clean.antennas()) {
            let power = clean_antenna.iter().map(|v| v.norm_sqr()).sum::<f64>() / clean_antenna.len() as f64;
            let sigma = (power / snr / 2.0).sqrt();
            for coef in antenna.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *coef += Complex64::new(re, im) * sigma;
            }
        }
    }

    let jitter = rand_distr::Normal::new(0.0, impairments.rssi.jitter_std_db).expect("validated std");
    let p = h
        .antennas()
        .map(|antenna| {
            let power = antenna.iter().map(|v| v.norm_sqr()).sum::<f64>() / antenna.len() as f64;
            let j = if impairments.rssi.jitter_std_db > 0.0 {
                jitter.sample(rng)
            } else {
                0.0
            };
            10.0 * power.max(f64::MIN_POSITIVE).log10() + impairments.rssi.calibration_db + j
        })
        .collect();
    (h, p)
}

/// One datapoint per packet time along the trajectory. Identical inputs
/// and seed give an identical dataset.
pub fn generate_dataset(
    system: &ArraySystem,
    trajectory: &TrajectorySpec,
    paths: &[PathSpec],
    impairments: &ImpairmentSpec,
    seed: u64,
) -> Result<Dataset> {
    trajectory.validate()?;
    impairments.validate(system)?;
    for p in paths {
        p.validate()?;
    }

    let points = (0..trajectory.packet_count())
        .into_par_iter()
        .map(|k| {
            let t = trajectory.packet_time(k);
            let x = trajectory.position_at_time(t);
            let clean = channel_response(system, &x, paths)?;
            let mut rng = packet_rng(seed, k as u64);
            let (h, p) = impair(system, &clean, impairments, &mut rng);
            Ok(CsiDatapoint { h, p, x, t })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ds = Dataset::from_points(system.clone(), points)?;
    ds.annotate("generator", "synth");
    ds.annotate("seed", seed.to_string());
    Ok(ds)
}
