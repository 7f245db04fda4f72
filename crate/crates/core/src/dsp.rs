//! CSI conditioning and classical array processing.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::array::{AntennaIndex, ArraySystem, ANTENNAS_PER_BOARD};
use crate::csi::{CsiDatapoint, CsiTensor};
use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// Scales each antenna so that its RMS magnitude over subcarriers equals
/// `10^(p/20)`, i.e. its mean power equals the RSSI in linear units.
/// Phases are untouched.
pub fn rssi_weight(h: &CsiTensor, p: &[f64]) -> Result<CsiTensor> {
    if p.len() != h.n_antennas() {
        return Err(Error::shape(format!(
            "{} RSSI values for {} antennas",
            p.len(),
            h.n_antennas()
        )));
    }
    let mut out = h.clone();
    for (flat, (antenna, &rssi)) in out.antennas_mut().zip(p).enumerate() {
        let rms = (antenna.iter().map(|v| v.norm_sqr()).sum::<f64>() / antenna.len() as f64).sqrt();
        if rms == 0.0 {
            return Err(Error::degenerate(format!("antenna {flat} has zero power")));
        }
        let gain = 10f64.powf(rssi / 20.0) / rms;
        antenna.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(out)
}

/// Removes the per-packet common phase: rotates the whole tensor so that
/// the subcarrier sum of the reference antenna is real and positive.
pub fn align_packet_phase(h: &CsiTensor, reference: AntennaIndex) -> Result<CsiTensor> {
    if reference.board >= h.n_boards() || reference.row >= 2 || reference.col >= 4 {
        return Err(Error::IndexOutOfBounds {
            axis: "alignment reference",
            index: reference.flat(),
            len: h.n_antennas(),
        });
    }
    let m: Complex64 = h.antenna(reference.flat()).iter().sum();
    let magnitude = m.norm();
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::degenerate("reference antenna has zero energy"));
    }
    Ok(h.scaled(m.conj() / magnitude))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationConfig {
    /// Half width of the triangular kernel, seconds.
    pub half_width: f64,
    pub reference: AntennaIndex,
    pub rssi_weighting: bool,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            half_width: 0.31,
            reference: AntennaIndex::default(),
            rssi_weighting: false,
        }
    }
}

/// Coherent kernel-weighted average of phase-aligned channel estimates
/// around `t_center`. Every estimate must lie strictly inside the kernel
/// support.
pub fn interpolate_csi(window: &[CsiDatapoint], t_center: f64, config: &InterpolationConfig) -> Result<CsiTensor> {
    let first = window
        .first()
        .ok_or_else(|| Error::InvalidData("empty interpolation window".into()))?;
    if !(config.half_width > 0.0) {
        return Err(Error::config("interpolation half_width must be positive"));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); first.h.as_slice().len()];
    let mut total_weight = 0.0;
    for (l, point) in window.iter().enumerate() {
        if point.h.shape() != first.h.shape() {
            return Err(Error::shape(format!("window element {l} has a different shape")));
        }
        let w = 1.0 - (point.t - t_center).abs() / config.half_width;
        if !(w > 0.0) {
            return Err(Error::InvalidData(format!(
                "window element {l} at t = {} lies outside the kernel around {t_center}",
                point.t
            )));
        }
        let h = if config.rssi_weighting {
            rssi_weight(&point.h, &point.p)?
        } else {
            point.h.clone()
        };
        let aligned = align_packet_phase(&h, config.reference)?;
        for (a, v) in acc.iter_mut().zip(aligned.as_slice()) {
            *a += v * w;
        }
        total_weight += w;
    }
    acc.iter_mut().for_each(|v| *v /= total_weight);
    CsiTensor::from_vec(first.h.n_boards(), first.h.n_subcarriers(), acc)
}

/// Input representation of the charting network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Leading time-domain taps kept per antenna.
    pub n_taps: usize,
    /// Scale antennas to their RSSI before transforming.
    pub rssi_weighting: bool,
    /// Normalize the feature vector of each datapoint to unit power.
    pub normalize: bool,
    /// Antenna used to remove the per-packet common phase; `None` skips alignment.
    pub alignment_reference: Option<AntennaIndex>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_taps: 16,
            rssi_weighting: false,
            normalize: true,
            alignment_reference: Some(AntennaIndex::default()),
        }
    }
}

impl FeatureConfig {
    pub fn feature_len(&self, n_boards: usize) -> usize {
        2 * n_boards * ANTENNAS_PER_BOARD * self.n_taps
    }

    pub fn validate(&self, n_subcarriers: usize) -> Result<()> {
        if self.n_taps == 0 || self.n_taps > n_subcarriers {
            return Err(Error::config(format!(
                "n_taps must be in 1..={n_subcarriers}, got {}",
                self.n_taps
            )));
        }
        Ok(())
    }
}

/// Time-domain feature extraction with a cached inverse transform plan.
pub struct FeatureExtractor {
    config: FeatureConfig,
    n_subcarriers: usize,
    ifft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, n_subcarriers: usize) -> Result<Self> {
        config.validate(n_subcarriers)?;
        let ifft = FftPlanner::new().plan_fft_inverse(n_subcarriers);
        Ok(FeatureExtractor {
            config,
            n_subcarriers,
            ifft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Features of a bare CSI tensor. RSSI weighting, when configured,
    /// needs the RSSI values; use [`FeatureExtractor::datapoint`] instead.
    pub fn tensor(&self, h: &CsiTensor) -> Result<Vec<f64>> {
        if h.n_subcarriers() != self.n_subcarriers {
            return Err(Error::shape(format!(
                "extractor built for {} subcarriers, got {}",
                self.n_subcarriers,
                h.n_subcarriers()
            )));
        }
        let aligned;
        let h = match self.config.alignment_reference {
            Some(reference) => {
                aligned = align_packet_phase(h, reference)?;
                &aligned
            }
            None => h,
        };

        let n_taps = self.config.n_taps;
        let n_values = h.n_antennas() * n_taps;
        let mut features = vec![0.0; 2 * n_values];
        let mut buffer = vec![Complex64::new(0.0, 0.0); self.n_subcarriers];
        let scale = 1.0 / self.n_subcarriers as f64;
        for (flat, antenna) in h.antennas().enumerate() {
            buffer.copy_from_slice(antenna);
            self.ifft.process(&mut buffer);
            for (tap, v) in buffer[..n_taps].iter().enumerate() {
                features[flat * n_taps + tap] = v.re * scale;
                features[n_values + flat * n_taps + tap] = v.im * scale;
            }
        }
        if self.config.normalize {
            let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::degenerate("retained taps have zero energy"));
            }
            features.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(features)
    }

    pub fn datapoint(&self, point: &CsiDatapoint) -> Result<Vec<f64>> {
        if self.config.rssi_weighting {
            self.tensor(&rssi_weight(&point.h, &point.p)?)
        } else {
            self.tensor(&point.h)
        }
    }
}

/// Real feature vector of length `2 * B * 8 * n_taps`: inverse DFT over
/// subcarriers (`1/N` normalized), first `n_taps` taps, real parts then
/// imaginary parts, each in (board, row, col, tap) order.
pub fn extract_features(h: &CsiTensor, config: &FeatureConfig) -> Result<Vec<f64>> {
    FeatureExtractor::new(*config, h.n_subcarriers())?.tensor(h)
}

/// Azimuth grid searched by the beamformer, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoaConfig {
    pub min_deg: f64,
    pub max_deg: f64,
    pub step_deg: f64,
}

impl Default for AoaConfig {
    fn default() -> Self {
        AoaConfig {
            min_deg: -90.0,
            max_deg: 90.0,
            step_deg: 0.5,
        }
    }
}

impl AoaConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.step_deg > 0.0) || !(self.max_deg > self.min_deg) {
            return Err(Error::config("AoA grid needs step > 0 and max > min"));
        }
        let n = ((self.max_deg - self.min_deg) / self.step_deg).round() as usize + 1;
        Ok((0..n)
            .map(|i| (self.min_deg + i as f64 * self.step_deg).to_radians())
            .collect())
    }
}

/// Delay-and-sum power `sum_n |a(theta, n)^H h_board(n)|^2` over an azimuth
/// grid, with far-field steering vectors in the board's horizontal plane.
pub fn beamformer_spectrum(h: &CsiTensor, system: &ArraySystem, board: usize, azimuths: &[f64]) -> Result<Vec<f64>> {
    let pose = system.board(board)?;
    if h.n_boards() != system.n_boards() || h.n_subcarriers() != system.n_subcarriers() {
        return Err(Error::shape("CSI tensor does not match the array system"));
    }
    let normal = pose.normal();
    let offsets: Vec<_> = (0..ANTENNAS_PER_BOARD)
        .map(|i| {
            let a = AntennaIndex::from_flat(i);
            system.antenna_position(board, a.row, a.col).expect("in range") - pose.center
        })
        .collect();
    let wavenumbers: Vec<f64> = system
        .subcarrier_frequencies()
        .iter()
        .map(|f| 2.0 * PI * f / SPEED_OF_LIGHT)
        .collect();
    let data = h.board(board);
    let n_sub = system.n_subcarriers();

    Ok(azimuths
        .iter()
        .map(|&theta| {
            let dir = normal * theta.cos() + pose.col_axis * theta.sin();
            let projections: Vec<f64> = offsets.iter().map(|o| dir.dot(o)).collect();
            wavenumbers
                .iter()
                .enumerate()
                .map(|(n, k)| {
                    let y: Complex64 = projections
                        .iter()
                        .enumerate()
                        .map(|(i, proj)| Complex64::cis(-k * proj) * data[i * n_sub + n])
                        .sum();
                    y.norm_sqr()
                })
                .sum()
        })
        .collect())
}

/// Azimuth of arrival at `board`, radians from broadside (positive toward
/// the column axis): grid argmax of the beamformer power, refined by a
/// parabola through the peak and its two neighbors.
pub fn estimate_aoa(h: &CsiTensor, system: &ArraySystem, board: usize, config: &AoaConfig) -> Result<f64> {
    system.board(board)?;
    if h.board(board).iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(Error::degenerate("board CSI is all zero"));
    }
    let grid = config.grid()?;
    let power = beamformer_spectrum(h, system, board, &grid)?;
    let (peak, _) = power.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, &p)| if p > best.1 { (i, p) } else { best },
    );
    if peak == 0 || peak + 1 == grid.len() {
        return Ok(grid[peak]);
    }
    let (left, mid, right) = (power[peak - 1], power[peak], power[peak + 1]);
    let curvature = left - 2.0 * mid + right;
    let delta = if curvature < 0.0 {
        (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(grid[peak] + delta * config.step_deg.to_radians())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(n_boards: usize, n_sub: usize, f: impl Fn(usize, usize) -> Complex64) -> CsiTensor {
        let data = (0..n_boards * 8)
            .flat_map(|a| (0..n_sub).map(move |n| (a, n)))
            .map(|(a, n)| f(a, n))
            .collect();
        CsiTensor::from_vec(n_boards, n_sub, data).unwrap()
    }

    #[test]
    fn rssi_weight_definition() {
        let h = tensor(1, 4, |_, n| Complex64::cis(n as f64));
        let same = rssi_weight(&h, &[0.0; 8]).unwrap();
        for (a, b) in same.as_slice().iter().zip(h.as_slice()) {
            assert!((a - b).norm() < 1e-15);
        }
        let mut p = vec![0.0; 8];
        p[3] = 20.0;
        let w = rssi_weight(&h, &p).unwrap();
        let rms = (w.antenna(3).iter().map(|v| v.norm_sqr()).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 10.0).abs() < 1e-12);
        assert!(rssi_weight(&CsiTensor::zeros(1, 4), &[0.0; 8]).is_err());
        assert!(rssi_weight(&h, &[0.0; 7]).is_err());
    }

    #[test]
    fn alignment() {
        let h = tensor(1, 5, |a, n| Complex64::new(1.0 + a as f64 + n as f64, 0.0));
        let aligned = align_packet_phase(&h, AntennaIndex::default()).unwrap();
        assert_eq!(aligned, h);
        let rotated = h.scaled(Complex64::cis(2.1));
        let realigned = align_packet_phase(&rotated, AntennaIndex::default()).unwrap();
        for (a, b) in realigned.as_slice().iter().zip(aligned.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(align_packet_phase(&CsiTensor::zeros(1, 5), AntennaIndex::default()).is_err());
        assert!(align_packet_phase(&h, AntennaIndex::new(1, 0, 0)).is_err());
    }

    #[test]
    fn interpolation_single_and_errors() {
        let h = tensor(1, 3, |a, n| Complex64::new(a as f64 + 1.0, n as f64));
        let p = CsiDatapoint {
            h: h.clone(),
            p: vec![0.0; 8],
            x: Default::default(),
            t: 1.0,
        };
        let config = InterpolationConfig::default();
        let out = interpolate_csi(std::slice::from_ref(&p), 1.0, &config).unwrap();
        assert_eq!(out, align_packet_phase(&h, config.reference).unwrap());
        assert!(interpolate_csi(&[], 1.0, &config).is_err());
        assert!(interpolate_csi(std::slice::from_ref(&p), 5.0, &config).is_err());
    }

    #[test]
    fn flat_spectrum_is_single_tap() {
        let h = tensor(1, 117, |_, _| Complex64::new(1.0, 0.0));
        let config = FeatureConfig {
            n_taps: 16,
            normalize: false,
            ..Default::default()
        };
        let f = extract_features(&h, &config).unwrap();
        assert_eq!(f.len(), 2 * 8 * 16);
        for a in 0..8 {
            for tap in 0..16 {
                let re = f[a * 16 + tap];
                let im = f[8 * 16 + a * 16 + tap];
                let expected = if tap == 0 { 1.0 } else { 0.0 };
                assert!((re - expected).abs() < 1e-12 && im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_phase_moves_energy_to_tap() {
        let n_sub = 117;
        let k = 5;
        let h = tensor(1, n_sub, |_, n| {
            Complex64::cis(-2.0 * PI * (k * n) as f64 / n_sub as f64)
        });
        let config = FeatureConfig {
            n_taps: 16,
            normalize: false,
            alignment_reference: None,
            ..Default::default()
        };
        let f = extract_features(&h, &config).unwrap();
        let energy = |tap: usize| f[tap].powi(2) + f[8 * 16 + tap].powi(2);
        assert!((energy(k) - 1.0).abs() < 1e-12);
        assert!((0..16).filter(|&t| t != k).all(|t| energy(t) < 1e-20));
    }

    #[test]
    fn feature_length_and_tap_bound() {
        let config = FeatureConfig::default();
        assert_eq!(config.feature_len(4), 1024);
        let h = tensor(1, 8, |_, _| Complex64::new(1.0, 0.0));
        assert!(extract_features(&h, &config).is_err());
    }

    #[test]
    fn aoa_rejects_zero_input() {
        let pose =
            crate::array::BoardPose::new(Default::default(), nalgebra::Vector3::x(), nalgebra::Vector3::z()).unwrap();
        let sys = ArraySystem::with_boards(vec![pose]).unwrap();
        let h = CsiTensor::for_system(&sys);
        assert!(estimate_aoa(&h, &sys, 0, &AoaConfig::default()).is_err());
        assert!(estimate_aoa(&h, &sys, 1, &AoaConfig::default()).is_err());
    }
}
