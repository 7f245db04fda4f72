//! Simulated multi-board real-time path.
//!
//! Every board reports each sniffed packet as its own [`BoardFrame`]; the
//! [`Aggregator`] regroups frames by (transmitter MAC, WiFi sequence
//! number) within a time window and fuses them back into datapoints.
//! Inter-board phase offsets are estimated against a channel model at
//! known positions.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::{ArraySystem, Vec3, ANTENNAS_PER_BOARD};
use crate::csi::{CsiDatapoint, CsiTensor, Dataset};
use crate::error::{Error, Result};
use crate::synth::{channel_response, packet_rng, PathSpec};

pub const DATAGRAM_MAGIC: u32 = 0x4553_5043;
/// magic, board id, reserved, sequence number, source id, timestamp
pub const DATAGRAM_HEADER_LEN: usize = 4 + 1 + 1 + 2 + 6 + 8;
pub const DEFAULT_SOURCE_ID: [u8; 6] = [0x02, 0x00, 0x5e, 0x10, 0x00, 0x01];

/// One board's report of one sniffed packet.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardFrame {
    pub board_id: u8,
    pub wifi_seq: u16,
    pub source_id: [u8; 6],
    /// Board-local receive time, seconds.
    pub rx_timestamp: f64,
    pub rssi: [f32; ANTENNAS_PER_BOARD],
    /// `8 * N_sub` coefficients in (row, col, subcarrier) order.
    pub csi: Vec<Complex32>,
}

impl BoardFrame {
    pub fn n_subcarriers(&self) -> usize {
        self.csi.len() / ANTENNAS_PER_BOARD
    }

    pub fn datagram_len(n_subcarriers: usize) -> usize {
        DATAGRAM_HEADER_LEN + 4 * ANTENNAS_PER_BOARD + 8 * ANTENNAS_PER_BOARD * n_subcarriers
    }

    pub fn to_datagram(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::datagram_len(self.n_subcarriers()));
        out.extend_from_slice(&DATAGRAM_MAGIC.to_le_bytes());
        out.push(self.board_id);
        out.push(0);
        out.extend_from_slice(&self.wifi_seq.to_le_bytes());
        out.extend_from_slice(&self.source_id);
        out.extend_from_slice(&self.rx_timestamp.to_le_bytes());
        for v in self.rssi {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.csi {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        out
    }

    /// Decodes one datagram; the subcarrier count follows from its length.
    pub fn from_datagram(bytes: &[u8]) -> Result<Self> {
        let fixed = DATAGRAM_HEADER_LEN + 4 * ANTENNAS_PER_BOARD;
        let per_sub = 8 * ANTENNAS_PER_BOARD;
        if bytes.len() < fixed + per_sub || !(bytes.len() - fixed).is_multiple_of(per_sub) {
            return Err(Error::InvalidData(format!(
                "datagram of {} bytes has no valid shape",
                bytes.len()
            )));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        if u32_at(0) != DATAGRAM_MAGIC {
            return Err(Error::BadMagic);
        }
        let f32_at = |i: usize| f32::from_bits(u32_at(i));
        let rssi = std::array::from_fn(|a| f32_at(DATAGRAM_HEADER_LEN + 4 * a));
        let csi = bytes[fixed..]
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
                )
            })
            .collect();
        Ok(BoardFrame {
            board_id: bytes[4],
            wifi_seq: u16::from_le_bytes([bytes[6], bytes[7]]),
            source_id: bytes[8..14].try_into().expect("6 bytes"),
            rx_timestamp: f64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes")),
            rssi,
            csi,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletenessPolicy {
    /// Groups missing a board are dropped.
    RequireAllBoards,
    /// Groups missing a board are emitted with zero-filled CSI and flagged.
    EmitPartialFlagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    /// Maximum receive-time spread of one packet's frames, seconds.
    pub match_window: f64,
    pub completeness_policy: CompletenessPolicy,
    /// Maximum number of buffered frames.
    pub buffer_capacity: usize,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            match_window: 0.05,
            completeness_policy: CompletenessPolicy::RequireAllBoards,
            buffer_capacity: 4096,
        }
    }
}

impl AggregatorConfig {
    pub fn validate(&self, n_boards: usize) -> Result<()> {
        if !(self.match_window > 0.0 && self.match_window.is_finite()) {
            return Err(Error::config("match_window must be positive"));
        }
        if self.buffer_capacity < n_boards {
            return Err(Error::config("buffer_capacity must hold at least one frame per board"));
        }
        Ok(())
    }
}

/// A fused packet: one datapoint without position.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPacket {
    pub source_id: [u8; 6],
    pub wifi_seq: u16,
    /// Earliest receive time in the group.
    pub t: f64,
    pub h: CsiTensor,
    pub p: Vec<f64>,
    /// Boards that contributed a frame.
    pub present: Vec<bool>,
}

impl AggregatedPacket {
    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn into_datapoint(self, x: Vec3) -> CsiDatapoint {
        CsiDatapoint {
            h: self.h,
            p: self.p,
            x,
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorStats {
    pub frames: u64,
    /// Frames repeating a board already present in their group.
    pub duplicates: u64,
    /// Frames older than every open group's window.
    pub late: u64,
    pub complete: u64,
    pub partial_emitted: u64,
    pub incomplete_dropped: u64,
    /// Incomplete groups forced out by the buffer limit (also counted as
    /// emitted or dropped).
    pub evicted: u64,
}

struct Group {
    source_id: [u8; 6],
    wifi_seq: u16,
    t_min: f64,
    t_max: f64,
    frames: Vec<Option<BoardFrame>>,
    count: usize,
}

/// Push-based packet matcher. Frames must arrive in non-decreasing receive
/// time across all boards (see [`merge_streams`]); packets are emitted in
/// order of their earliest receive time.
pub struct Aggregator {
    n_boards: usize,
    n_subcarriers: usize,
    config: AggregatorConfig,
    pending: VecDeque<Group>,
    buffered: usize,
    latest: f64,
    ready: VecDeque<AggregatedPacket>,
    stats: AggregatorStats,
}

impl Aggregator {
    pub fn new(n_boards: usize, n_subcarriers: usize, config: AggregatorConfig) -> Result<Self> {
        config.validate(n_boards)?;
        Ok(Aggregator {
            n_boards,
            n_subcarriers,
            config,
            pending: VecDeque::new(),
            buffered: 0,
            latest: f64::NEG_INFINITY,
            ready: VecDeque::new(),
            stats: AggregatorStats::default(),
        })
    }

    pub fn for_system(system: &ArraySystem, config: AggregatorConfig) -> Result<Self> {
        Self::new(system.n_boards(), system.n_subcarriers(), config)
    }

    pub fn stats(&self) -> AggregatorStats {
        self.stats
    }

    pub fn push(&mut self, frame: BoardFrame) -> Result<()> {
        if frame.board_id as usize >= self.n_boards {
            return Err(Error::IndexOutOfBounds {
                axis: "board",
                index: frame.board_id as usize,
                len: self.n_boards,
            });
        }
        if frame.csi.len() != ANTENNAS_PER_BOARD * self.n_subcarriers {
            return Err(Error::shape(format!(
                "frame carries {} coefficients, expected {}",
                frame.csi.len(),
                ANTENNAS_PER_BOARD * self.n_subcarriers
            )));
        }
        if !frame.rx_timestamp.is_finite() {
            return Err(Error::InvalidData("non-finite frame timestamp".into()));
        }
        self.stats.frames += 1;
        let t = frame.rx_timestamp;
        let window = self.config.match_window;
        if t + window < self.latest {
            self.stats.late += 1;
            return Ok(());
        }
        self.latest = self.latest.max(t);

        let board = frame.board_id as usize;
        let slot = self.pending.iter_mut().rev().find(|g| {
            g.source_id == frame.source_id && g.wifi_seq == frame.wifi_seq && g.t_max.max(t) - g.t_min.min(t) <= window
        });
        match slot {
            Some(group) if group.frames[board].is_some() => {
                self.stats.duplicates += 1;
            }
            Some(group) => {
                group.t_min = group.t_min.min(t);
                group.t_max = group.t_max.max(t);
                group.frames[board] = Some(frame);
                group.count += 1;
                self.buffered += 1;
            }
            None => {
                let mut frames = vec![None; self.n_boards];
                frames[board] = Some(frame);
                self.pending.push_back(Group {
                    source_id: frames[board].as_ref().expect("just set").source_id,
                    wifi_seq: frames[board].as_ref().expect("just set").wifi_seq,
                    t_min: t,
                    t_max: t,
                    frames,
                    count: 1,
                });
                self.buffered += 1;
            }
        }
        while self.buffered > self.config.buffer_capacity {
            let oldest = self.pending.pop_front().expect("buffer is nonempty");
            if oldest.count < self.n_boards {
                self.stats.evicted += 1;
            }
            self.resolve(oldest);
        }
        self.drain(false);
        Ok(())
    }

    /// Moves resolved groups at the front of the queue to the output.
    fn drain(&mut self, flush: bool) {
        while let Some(front) = self.pending.front() {
            let complete = front.count == self.n_boards;
            let expired = self.latest - front.t_min > self.config.match_window;
            if !(complete || expired || flush) {
                break;
            }
            let group = self.pending.pop_front().expect("front exists");
            self.resolve(group);
        }
    }

    fn resolve(&mut self, group: Group) {
        self.buffered -= group.count;
        let complete = group.count == self.n_boards;
        if complete {
            self.stats.complete += 1;
        } else if self.config.completeness_policy == CompletenessPolicy::EmitPartialFlagged {
            self.stats.partial_emitted += 1;
        } else {
            self.stats.incomplete_dropped += 1;
            return;
        }
        let per_board = ANTENNAS_PER_BOARD * self.n_subcarriers;
        let mut h = CsiTensor::zeros(self.n_boards, self.n_subcarriers);
        let mut p = vec![0.0; self.n_boards * ANTENNAS_PER_BOARD];
        let mut present = vec![false; self.n_boards];
        for (b, frame) in group.frames.into_iter().enumerate() {
            let Some(frame) = frame else { continue };
            present[b] = true;
            let dst = &mut h.as_mut_slice()[b * per_board..(b + 1) * per_board];
            for (d, s) in dst.iter_mut().zip(&frame.csi) {
                *d = Complex64::new(s.re as f64, s.im as f64);
            }
            for (d, s) in p[b * ANTENNAS_PER_BOARD..].iter_mut().zip(frame.rssi) {
                *d = s as f64;
            }
        }
        self.ready.push_back(AggregatedPacket {
            source_id: group.source_id,
            wifi_seq: group.wifi_seq,
            t: group.t_min,
            h,
            p,
            present,
        });
    }

    pub fn pop(&mut self) -> Option<AggregatedPacket> {
        self.ready.pop_front()
    }

    /// Resolves every open group; call once the input is exhausted.
    pub fn finish(&mut self) {
        self.drain(true);
    }
}

struct Head {
    t: f64,
    stream: usize,
    frame: BoardFrame,
}

impl PartialEq for Head {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head {}

impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Head {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.stream.cmp(&self.stream))
    }
}

/// Merges per-board streams into one sequence ordered by receive time,
/// ties broken by stream index. Inputs are consumed lazily, so channel
/// receivers fed by producer threads work as streams.
pub struct MergeStreams<I: Iterator<Item = BoardFrame>> {
    streams: Vec<I>,
    heap: BinaryHeap<Head>,
}

pub fn merge_streams<I: Iterator<Item = BoardFrame>>(streams: Vec<I>) -> MergeStreams<I> {
    let mut merged = MergeStreams {
        streams,
        heap: BinaryHeap::new(),
    };
    for s in 0..merged.streams.len() {
        merged.refill(s);
    }
    merged
}

impl<I: Iterator<Item = BoardFrame>> MergeStreams<I> {
    fn refill(&mut self, stream: usize) {
        if let Some(frame) = self.streams[stream].next() {
            self.heap.push(Head {
                t: frame.rx_timestamp,
                stream,
                frame,
            });
        }
    }
}

impl<I: Iterator<Item = BoardFrame>> Iterator for MergeStreams<I> {
    type Item = BoardFrame;

    fn next(&mut self) -> Option<BoardFrame> {
        let head = self.heap.pop()?;
        self.refill(head.stream);
        Some(head.frame)
    }
}

/// Merges the streams, aggregates them and returns every emitted packet.
pub fn aggregate<S>(
    streams: Vec<S>,
    n_boards: usize,
    n_subcarriers: usize,
    config: AggregatorConfig,
) -> Result<(Vec<AggregatedPacket>, AggregatorStats)>
where
    S: IntoIterator<Item = BoardFrame>,
{
    let mut aggregator = Aggregator::new(n_boards, n_subcarriers, config)?;
    let mut out = Vec::new();
    for frame in merge_streams(streams.into_iter().map(IntoIterator::into_iter).collect()) {
        aggregator.push(frame)?;
        out.extend(std::iter::from_fn(|| aggregator.pop()));
    }
    aggregator.finish();
    out.extend(std::iter::from_fn(|| aggregator.pop()));
    Ok((out, aggregator.stats()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitConfig {
    /// Probability that a single board frame is lost.
    pub loss_rate: f64,
    /// Std of the per-frame receive-time jitter, seconds.
    pub jitter_std: f64,
    pub seed: u64,
    pub source_id: [u8; 6],
}

impl Default for EmitConfig {
    fn default() -> Self {
        EmitConfig {
            loss_rate: 0.0,
            jitter_std: 0.0,
            seed: 0,
            source_id: DEFAULT_SOURCE_ID,
        }
    }
}

// keeps emission draws apart from the generator's streams for the same seed
const EMIT_SEED_SALT: u64 = 0x5354_5245_414d_0001;

/// Splits every datapoint into per-board frames, each independently lost
/// with `loss_rate` and time-jittered. Datapoint `l` gets sequence number
/// `l mod 2^16`. Each returned stream is sorted by receive time.
pub fn emit_board_streams(dataset: &Dataset, config: &EmitConfig) -> Result<Vec<Vec<BoardFrame>>> {
    if !(0.0..=1.0).contains(&config.loss_rate) {
        return Err(Error::config("loss_rate must be a probability"));
    }
    let jitter =
        Normal::new(0.0, config.jitter_std).map_err(|_| Error::config("jitter_std must be finite and >= 0"))?;
    let n_boards = dataset.system.n_boards();
    let n_sub = dataset.system.n_subcarriers();
    let per_board = ANTENNAS_PER_BOARD * n_sub;
    let mut streams = vec![Vec::with_capacity(dataset.len()); n_boards];
    for (l, point) in dataset.points().iter().enumerate() {
        for (b, stream) in streams.iter_mut().enumerate() {
            let mut rng = packet_rng(config.seed ^ EMIT_SEED_SALT, (l * n_boards + b) as u64);
            let lost = rng.random::<f64>() < config.loss_rate;
            let dt = jitter.sample(&mut rng);
            if lost {
                continue;
            }
            let csi = point.h.as_slice()[b * per_board..(b + 1) * per_board]
                .iter()
                .map(|c| Complex32::new(c.re as f32, c.im as f32))
                .collect();
            stream.push(BoardFrame {
                board_id: b as u8,
                wifi_seq: (l % (1 << 16)) as u16,
                source_id: config.source_id,
                rx_timestamp: point.t + dt,
                rssi: std::array::from_fn(|a| point.p[b * ANTENNAS_PER_BOARD + a] as f32),
                csi,
            });
        }
    }
    for stream in &mut streams {
        stream.sort_by(|a, b| a.rx_timestamp.total_cmp(&b.rx_timestamp));
    }
    Ok(streams)
}

/// Model-based inter-board phase estimate.
///
/// For every datapoint and subcarrier, each board's CSI is correlated with
/// the modelled channel at the known position; the phase of that
/// correlation relative to the reference board is averaged as a unit
/// phasor. Per-packet phase and timing impairments cancel in the relative
/// phase. Returns one phase per board, zero for the reference.
pub fn calibrate_board_phases(
    points: &[CsiDatapoint],
    system: &ArraySystem,
    paths: &[PathSpec],
    reference_board: usize,
) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::InvalidData(
            "phase calibration needs at least one datapoint".into(),
        ));
    }
    let n_boards = system.n_boards();
    if reference_board >= n_boards {
        return Err(Error::IndexOutOfBounds {
            axis: "board",
            index: reference_board,
            len: n_boards,
        });
    }
    let n_sub = system.n_subcarriers();
    let per_board = ANTENNAS_PER_BOARD * n_sub;
    let mut sums = vec![Complex64::new(0.0, 0.0); n_boards];
    let mut z = vec![Complex64::new(0.0, 0.0); n_boards];
    for point in points {
        point.validate(system)?;
        let model = channel_response(system, &point.x, paths)?;
        for n in 0..n_sub {
            for (b, zb) in z.iter_mut().enumerate() {
                let range = b * per_board..(b + 1) * per_board;
                *zb = point.h.as_slice()[range.clone()]
                    .iter()
                    .zip(&model.as_slice()[range])
                    .skip(n)
                    .step_by(n_sub)
                    .map(|(h, m)| h * m.conj())
                    .sum();
            }
            let zref = z[reference_board];
            for (b, zb) in z.iter().enumerate() {
                let w = zb * zref.conj();
                let norm = w.norm();
                if norm > 0.0 && norm.is_finite() {
                    sums[b] += w / norm;
                }
            }
        }
    }
    let phases = sums
        .iter()
        .enumerate()
        .map(|(b, s)| if b == reference_board { 0.0 } else { wrap_phase(s.arg()) })
        .collect();
    Ok(phases)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let wrapped = (phi + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if wrapped == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        wrapped
    }
}

/// Multiplies board `b` by `exp(-j phases[b])`; RSSI, position and time
/// are left untouched.
pub fn apply_phase_calibration(point: &CsiDatapoint, phases: &[f64]) -> Result<CsiDatapoint> {
    let n_boards = point.h.n_boards();
    if phases.len() != n_boards {
        return Err(Error::shape(format!("{} phases for {n_boards} boards", phases.len())));
    }
    if !phases.iter().all(|p| p.is_finite()) {
        return Err(Error::InvalidData("non-finite calibration phase".into()));
    }
    let mut out = point.clone();
    for (b, &psi) in phases.iter().enumerate() {
        let rot = Complex64::from_polar(1.0, -psi);
        out.h.board_mut(b).iter_mut().for_each(|v| *v *= rot);
    }
    Ok(out)
}
