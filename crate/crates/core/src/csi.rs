//! CSI tensors, datapoints and datasets.

use std::collections::BTreeMap;
use std::ops::Range;

use num_complex::Complex64;

use crate::array::{AntennaIndex, ArraySystem, Vec3, ANTENNAS_PER_BOARD};
use crate::error::{Error, Result};

/// Complex channel coefficients of shape `(B, 2, 4, N_sub)`, stored
/// board-major, then row, column and subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor {
    n_boards: usize,
    n_subcarriers: usize,
    data: Vec<Complex64>,
}

impl CsiTensor {
    pub fn zeros(n_boards: usize, n_subcarriers: usize) -> Self {
        CsiTensor {
            n_boards,
            n_subcarriers,
            data: vec![Complex64::new(0.0, 0.0); n_boards * ANTENNAS_PER_BOARD * n_subcarriers],
        }
    }

    pub fn for_system(system: &ArraySystem) -> Self {
        CsiTensor::zeros(system.n_boards(), system.n_subcarriers())
    }

    pub fn from_vec(n_boards: usize, n_subcarriers: usize, data: Vec<Complex64>) -> Result<Self> {
        let expected = n_boards * ANTENNAS_PER_BOARD * n_subcarriers;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "CSI buffer holds {} coefficients, shape ({n_boards}, 2, 4, {n_subcarriers}) needs {expected}",
                data.len()
            )));
        }
        Ok(CsiTensor {
            n_boards,
            n_subcarriers,
            data,
        })
    }

    pub fn n_boards(&self) -> usize {
        self.n_boards
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_antennas(&self) -> usize {
        self.n_boards * ANTENNAS_PER_BOARD
    }

    /// `(B, 2, 4, N_sub)`
    pub fn shape(&self) -> [usize; 4] {
        [self.n_boards, 2, 4, self.n_subcarriers]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    /// Subcarrier vector of the antenna with the given flat index.
    pub fn antenna(&self, flat: usize) -> &[Complex64] {
        let n = self.n_subcarriers;
        &self.data[flat * n..(flat + 1) * n]
    }

    pub fn antenna_mut(&mut self, flat: usize) -> &mut [Complex64] {
        let n = self.n_subcarriers;
        &mut self.data[flat * n..(flat + 1) * n]
    }

    pub fn antennas(&self) -> std::slice::Chunks<'_, Complex64> {
        self.data.chunks(self.n_subcarriers)
    }

    pub fn antennas_mut(&mut self) -> std::slice::ChunksMut<'_, Complex64> {
        self.data.chunks_mut(self.n_subcarriers)
    }

    /// All coefficients of one board, `8 * N_sub` values.
    pub fn board(&self, board: usize) -> &[Complex64] {
        let len = ANTENNAS_PER_BOARD * self.n_subcarriers;
        &self.data[board * len..(board + 1) * len]
    }

    pub fn board_mut(&mut self, board: usize) -> &mut [Complex64] {
        let len = ANTENNAS_PER_BOARD * self.n_subcarriers;
        &mut self.data[board * len..(board + 1) * len]
    }

    pub fn get(&self, idx: AntennaIndex, n: usize) -> Complex64 {
        self.data[idx.flat() * self.n_subcarriers + n]
    }

    pub fn set(&mut self, idx: AntennaIndex, n: usize, value: Complex64) {
        self.data[idx.flat() * self.n_subcarriers + n] = value;
    }

    pub fn scale(&mut self, factor: Complex64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: Complex64) -> CsiTensor {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Rounds every coefficient to the nearest `f32`, the precision of the
    /// container and datagram formats.
    pub fn to_storage_precision(&self) -> CsiTensor {
        CsiTensor {
            n_boards: self.n_boards,
            n_subcarriers: self.n_subcarriers,
            data: self
                .data
                .iter()
                .map(|v| Complex64::new(v.re as f32 as f64, v.im as f32 as f64))
                .collect(),
        }
    }
}

/// One sniffed WiFi packet as seen by every antenna of the array.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiDatapoint {
    /// Channel coefficients, `(B, 2, 4, N_sub)`.
    pub h: CsiTensor,
    /// RSSI per antenna in dB, `(B, 2, 4)` flattened.
    pub p: Vec<f64>,
    /// Transmitter position, meters.
    pub x: Vec3,
    /// Timestamp, seconds.
    pub t: f64,
}

impl CsiDatapoint {
    pub fn validate(&self, system: &ArraySystem) -> Result<()> {
        if self.h.n_boards() != system.n_boards() || self.h.n_subcarriers() != system.n_subcarriers() {
            return Err(Error::shape(format!(
                "datapoint CSI shape {:?} does not match system ({}, 2, 4, {})",
                self.h.shape(),
                system.n_boards(),
                system.n_subcarriers()
            )));
        }
        if self.p.len() != system.n_antennas() {
            return Err(Error::shape(format!(
                "RSSI has {} entries, system has {} antennas",
                self.p.len(),
                system.n_antennas()
            )));
        }
        if !self.h.is_finite() {
            return Err(Error::InvalidData("non-finite CSI coefficient".into()));
        }
        if !self.p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite RSSI value".into()));
        }
        if !self.t.is_finite() {
            return Err(Error::InvalidData("non-finite timestamp".into()));
        }
        Ok(())
    }

    /// First two position components, the planar ground truth.
    pub fn position_2d(&self) -> [f64; 2] {
        [self.x.x, self.x.y]
    }

    pub fn to_storage_precision(&self) -> CsiDatapoint {
        CsiDatapoint {
            h: self.h.to_storage_precision(),
            p: self.p.iter().map(|&v| v as f32 as f64).collect(),
            x: self.x,
            t: self.t,
        }
    }
}

/// An ordered collection of datapoints sharing one array system.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: ArraySystem,
    points: Vec<CsiDatapoint>,
    pub annotations: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(system: ArraySystem) -> Self {
        Dataset {
            system,
            points: Vec::new(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn from_points(system: ArraySystem, points: Vec<CsiDatapoint>) -> Result<Self> {
        let mut ds = Dataset::new(system);
        ds.points.reserve(points.len());
        for p in points {
            ds.push(p)?;
        }
        Ok(ds)
    }

    /// Appends a datapoint; shapes must match and timestamps may not decrease.
    pub fn push(&mut self, point: CsiDatapoint) -> Result<()> {
        point.validate(&self.system)?;
        if let Some(last) = self.points.last() {
            if point.t < last.t {
                return Err(Error::InvalidData(format!(
                    "timestamp {} at index {} precedes {}",
                    point.t,
                    self.points.len(),
                    last.t
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn annotate(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.annotations.insert(key.into(), value.into());
    }

    pub fn points(&self) -> &[CsiDatapoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<CsiDatapoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, l: usize) -> Option<&CsiDatapoint> {
        self.points.get(l)
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn positions_2d(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(CsiDatapoint::position_2d).collect()
    }

    /// Contiguous slice of the dataset, e.g. for train/test splits.
    pub fn slice(&self, range: Range<usize>) -> Result<Dataset> {
        if range.start > range.end || range.end > self.points.len() {
            return Err(Error::IndexOutOfBounds {
                axis: "datapoint",
                index: range.end,
                len: self.points.len(),
            });
        }
        Ok(Dataset {
            system: self.system.clone(),
            points: self.points[range].to_vec(),
            annotations: self.annotations.clone(),
        })
    }

    /// Same dataset with CSI and RSSI rounded to `f32`, i.e. exactly what a
    /// write/read cycle through the container yields.
    pub fn to_storage_precision(&self) -> Dataset {
        Dataset {
            system: self.system.clone(),
            points: self.points.iter().map(CsiDatapoint::to_storage_precision).collect(),
            annotations: self.annotations.clone(),
        }
    }
}
