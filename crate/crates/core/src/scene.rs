//! Scene builders: array layouts along a wall segment, ring trajectories
//! and the built-in reference scene (a four-board array in a room corner
//! facing a free-standing metal wall, with the transmitter driving a ring
//! between them).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{ArraySystem, BoardPose, Vec3, COLS_PER_BOARD, ROWS_PER_BOARD};
use crate::error::{Error, Result};
use crate::synth::{PathSpec, TrajectorySpec};

/// Boards tiled into one planar array along a horizontal segment.
///
/// The array normal is the segment direction rotated clockwise by 90
/// degrees in the xy-plane; boards are `board_columns` wide and
/// `board_rows` high, packed without gaps, centered on the segment
/// midpoint at `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayLayout {
    pub segment: [[f64; 2]; 2],
    pub height: f64,
    pub board_columns: usize,
    pub board_rows: usize,
    pub element_spacing: f64,
    pub carrier_frequency: f64,
    pub subcarrier_spacing: f64,
    pub n_subcarriers: usize,
    pub subcarrier_index_offset: i32,
}

impl Default for ArrayLayout {
    fn default() -> Self {
        ArrayLayout {
            segment: [[-5.3399, 4.5903], [-5.0218, 4.9378]],
            height: 0.0,
            board_columns: 2,
            board_rows: 2,
            element_spacing: crate::array::DEFAULT_ELEMENT_SPACING,
            carrier_frequency: crate::array::DEFAULT_CARRIER_FREQUENCY,
            subcarrier_spacing: crate::array::DEFAULT_SUBCARRIER_SPACING,
            n_subcarriers: crate::array::DEFAULT_N_SUBCARRIERS,
            subcarrier_index_offset: crate::array::DEFAULT_SUBCARRIER_INDEX_OFFSET,
        }
    }
}

impl ArrayLayout {
    pub fn build(&self) -> Result<ArraySystem> {
        let [a, b] = self.segment;
        let dir = Vec3::new(b[0] - a[0], b[1] - a[1], 0.0);
        if dir.norm() < 1e-9 {
            return Err(Error::config("array segment has zero length"));
        }
        if self.board_columns == 0 || self.board_rows == 0 {
            return Err(Error::config("array needs at least one board column and row"));
        }
        let u = dir.normalize();
        let normal = Vec3::new(u.y, -u.x, 0.0);
        let mid = Vec3::new(0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), self.height);
        let width = COLS_PER_BOARD as f64 * self.element_spacing;
        let tall = ROWS_PER_BOARD as f64 * self.element_spacing;
        let mut boards = Vec::with_capacity(self.board_columns * self.board_rows);
        // top row first, left to right as seen from the room
        for r in 0..self.board_rows {
            for c in 0..self.board_columns {
                let dc = c as f64 - 0.5 * (self.board_columns - 1) as f64;
                let dr = 0.5 * (self.board_rows - 1) as f64 - r as f64;
                let center = mid + u * (dc * width) + Vec3::z() * (dr * tall);
                boards.push(BoardPose::facing(center, normal)?);
            }
        }
        ArraySystem::new(
            boards,
            self.element_spacing,
            self.carrier_frequency,
            self.subcarrier_spacing,
            self.n_subcarriers,
            self.subcarrier_index_offset,
        )
    }
}

/// Archimedean spiral between two radii: a ring-shaped coverage area
/// driven once from the inner to the outer radius.
///
/// The speed is chosen so that `packet_count` packets at `packet_rate`
/// cover exactly one traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingTrajectory {
    pub center: [f64; 2],
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub turns: f64,
    pub height: f64,
    pub packet_rate: f64,
    pub packet_count: usize,
    pub start_time: f64,
    /// Polyline vertices per turn.
    pub resolution: usize,
}

impl Default for RingTrajectory {
    fn default() -> Self {
        RingTrajectory {
            center: [-4.2, 3.5],
            inner_radius: 0.25,
            outer_radius: 1.2,
            turns: 16.0,
            height: 0.0,
            packet_rate: 50.0,
            packet_count: 5000,
            start_time: 0.0,
            resolution: 360,
        }
    }
}

impl RingTrajectory {
    pub fn build(&self) -> Result<TrajectorySpec> {
        if !(self.inner_radius >= 0.0 && self.outer_radius > self.inner_radius) {
            return Err(Error::config("ring needs 0 <= inner_radius < outer_radius"));
        }
        if !(self.turns > 0.0) || self.resolution < 3 || self.packet_count < 2 {
            return Err(Error::config(
                "ring needs turns > 0, resolution >= 3, packet_count >= 2",
            ));
        }
        if !(self.packet_rate > 0.0) {
            return Err(Error::config("packet_rate must be positive"));
        }
        let vertices = (self.turns * self.resolution as f64).ceil() as usize;
        let waypoints: Vec<[f64; 3]> = (0..=vertices)
            .map(|i| {
                let s = i as f64 / vertices as f64;
                let theta = 2.0 * PI * self.turns * s;
                let r = self.inner_radius + (self.outer_radius - self.inner_radius) * s;
                [
                    self.center[0] + r * theta.cos(),
                    self.center[1] + r * theta.sin(),
                    self.height,
                ]
            })
            .collect();
        let mut spec = TrajectorySpec {
            waypoints,
            speed: 1.0,
            packet_rate: self.packet_rate,
            start_time: self.start_time,
            packet_count: Some(self.packet_count),
        };
        // shaved by a relative 1e-12 so rounding never wraps the last packet
        // back to the start
        spec.speed = spec.length() * self.packet_rate / (self.packet_count - 1) as f64 * (1.0 - 1e-12);
        spec.validate()?;
        Ok(spec)
    }
}

/// Metal wall of the reference scene, as an xy segment.
pub const REFERENCE_WALL: [[f64; 2]; 2] = [[-2.855, 2.571], [-3.712, 1.974]];

/// Line of sight plus one strong specular wall reflection.
pub fn reference_paths() -> Vec<PathSpec> {
    vec![
        PathSpec::line_of_sight(Complex64::new(1.0, 0.0)),
        PathSpec::wall(REFERENCE_WALL[0], REFERENCE_WALL[1], Complex64::new(0.8, 0.0)),
    ]
}

/// Geometry, propagation and motion of a synthetic measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub system: ArraySystem,
    pub paths: Vec<PathSpec>,
    pub trajectory: TrajectorySpec,
}

impl Scene {
    /// The built-in reference scene with 5000 packets.
    pub fn reference() -> Scene {
        Scene {
            system: ArrayLayout::default().build().expect("reference layout is valid"),
            paths: reference_paths(),
            trajectory: RingTrajectory::default().build().expect("reference ring is valid"),
        }
    }
}

/// Largest pairwise distance of a planar point set.
pub fn diameter(points: &[[f64; 2]]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    best
}
