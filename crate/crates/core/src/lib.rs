//! Phase-coherent WiFi CSI toolkit.
//!
//! The crate covers the whole data path of a multi-board, phase-synchronous
//! WiFi antenna array at desk scale:
//!
//! - [`array`] and [`csi`]: array geometry, subcarrier grid, CSI tensors and datasets
//! - [`synth`]: geometric multipath channel with WiFi-style impairments
//! - [`ingest`]: the `.espcsi` binary dataset container
//! - [`stream`]: per-board datagrams, cross-board packet matching, phase calibration
//! - [`dsp`]: RSSI weighting, phase alignment, coherent interpolation, features, AoA
//! - [`charting`]: the forward charting network trained with a triplet loss
//! - [`eval`]: affine chart registration and chart quality metrics
//! - [`config`]: the versioned pipeline configuration file
//!
//! Runnable walkthroughs for each capability live in `examples/`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod charting;
pub mod config;
pub mod csi;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod scene;
pub mod stream;
pub mod synth;

pub use array::{AntennaIndex, ArraySystem, BoardPose, Vec3};
pub use csi::{CsiDatapoint, CsiTensor, Dataset};
pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
