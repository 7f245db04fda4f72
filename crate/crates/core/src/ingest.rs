//! The `.espcsi` dataset container.
//!
//! Layout: 8-byte magic `ESPCSID1`, a little-endian `u32` header length, a
//! UTF-8 JSON metadata header, then fixed-size little-endian records
//! `t: f64, x: 3 x f64, p: 8B x f32, h: 8B N_sub x (re f32, im f32)`.
//! CSI and RSSI are stored as `f32`; reading a written dataset yields
//! exactly [`Dataset::to_storage_precision`] of the original.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{ArraySystem, Vec3, ANTENNAS_PER_BOARD};
use crate::csi::{CsiDatapoint, CsiTensor, Dataset};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ESPCSID1";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "espcsi";

/// Bytes per record for `n_boards` boards and `n_subcarriers` subcarriers.
pub fn record_size(n_boards: usize, n_subcarriers: usize) -> usize {
    8 + 24 + 4 * ANTENNAS_PER_BOARD * n_boards + 8 * ANTENNAS_PER_BOARD * n_boards * n_subcarriers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Creation {
    pub software: String,
    pub version: String,
}

/// JSON header of a container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub system: ArraySystem,
    pub annotations: BTreeMap<String, String>,
    pub record_count: u64,
    pub record_size: u64,
    pub creation: Creation,
}

impl Metadata {
    pub fn new(system: ArraySystem, annotations: BTreeMap<String, String>, record_count: u64) -> Self {
        let record_size = record_size(system.n_boards(), system.n_subcarriers()) as u64;
        Metadata {
            format_version: FORMAT_VERSION,
            system,
            annotations,
            record_count,
            record_size,
            creation: Creation {
                software: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
        }
    }

    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Metadata(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let expected = record_size(self.system.n_boards(), self.system.n_subcarriers()) as u64;
        if self.record_size != expected {
            return Err(Error::Metadata(format!(
                "record_size {} does not match {} boards x {} subcarriers ({expected})",
                self.record_size,
                self.system.n_boards(),
                self.system.n_subcarriers()
            )));
        }
        Ok(())
    }
}

/// Streaming record writer. The record count is declared up front and
/// checked by [`DatasetWriter::finish`].
pub struct DatasetWriter<W: Write> {
    sink: W,
    system: ArraySystem,
    declared: u64,
    written: u64,
    bytes: u64,
    buf: Vec<u8>,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut sink: W, metadata: &Metadata) -> Result<Self> {
        metadata.check()?;
        let json = serde_json::to_vec(metadata)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Metadata("header exceeds 4 GiB".into()))?;
        sink.write_all(MAGIC)?;
        sink.write_all(&len.to_le_bytes())?;
        sink.write_all(&json)?;
        Ok(DatasetWriter {
            sink,
            system: metadata.system.clone(),
            declared: metadata.record_count,
            written: 0,
            bytes: 12 + json.len() as u64,
            buf: Vec::with_capacity(metadata.record_size as usize),
        })
    }

    pub fn write_record(&mut self, point: &CsiDatapoint) -> Result<()> {
        point.validate(&self.system)?;
        if self.written == self.declared {
            return Err(Error::InvalidData(format!(
                "more than the declared {} records",
                self.declared
            )));
        }
        let buf = &mut self.buf;
        buf.clear();
        buf.extend_from_slice(&point.t.to_le_bytes());
        for v in point.x.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &point.p {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for c in point.h.as_slice() {
            buf.extend_from_slice(&(c.re as f32).to_le_bytes());
            buf.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
        self.sink.write_all(buf)?;
        self.written += 1;
        self.bytes += buf.len() as u64;
        Ok(())
    }

    /// Flushes and returns the total byte count.
    pub fn finish(mut self) -> Result<u64> {
        if self.written != self.declared {
            return Err(Error::InvalidData(format!(
                "declared {} records, wrote {}",
                self.declared, self.written
            )));
        }
        self.sink.flush()?;
        Ok(self.bytes)
    }
}

pub fn write_dataset(dataset: &Dataset, sink: impl Write) -> Result<u64> {
    let metadata = Metadata::new(
        dataset.system.clone(),
        dataset.annotations.clone(),
        dataset.len() as u64,
    );
    let mut writer = DatasetWriter::new(sink, &metadata)?;
    for point in dataset.points() {
        writer.write_record(point)?;
    }
    writer.finish()
}

/// Streaming record reader; holds one record in memory at a time.
pub struct DatasetReader<R: Read> {
    source: R,
    metadata: Metadata,
    next: u64,
    buf: Vec<u8>,
    failed: bool,
}

fn read_full(source: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        if read_full(&mut source, &mut magic)? < 8 || &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut len = [0u8; 4];
        if read_full(&mut source, &mut len)? < 4 {
            return Err(Error::Metadata("header length truncated".into()));
        }
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        if read_full(&mut source, &mut json)? < json.len() {
            return Err(Error::Metadata("header truncated".into()));
        }
        let metadata: Metadata = serde_json::from_slice(&json).map_err(|e| Error::Metadata(e.to_string()))?;
        metadata.check()?;
        Ok(DatasetReader {
            source,
            buf: vec![0u8; metadata.record_size as usize],
            metadata,
            next: 0,
            failed: false,
        })
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn system(&self) -> &ArraySystem {
        &self.metadata.system
    }

    /// Next record, `None` once all declared records were read.
    pub fn read_record(&mut self) -> Result<Option<CsiDatapoint>> {
        if self.failed || self.next == self.metadata.record_count {
            return Ok(None);
        }
        let l = self.next;
        if read_full(&mut self.source, &mut self.buf)? < self.buf.len() {
            self.failed = true;
            return Err(Error::Truncated { record: l });
        }
        self.next += 1;
        let system = &self.metadata.system;
        let mut words = self.buf.chunks_exact(4);
        let mut f64s = self.buf[..32]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let t = f64s.next().expect("t");
        let x = Vec3::new(
            f64s.next().expect("x"),
            f64s.next().expect("y"),
            f64s.next().expect("z"),
        );
        let mut next_f32 =
            || f32::from_le_bytes(words.next().expect("record size checked").try_into().expect("4 bytes")) as f64;
        for _ in 0..8 {
            next_f32();
        }
        let p: Vec<f64> = (0..system.n_antennas()).map(|_| next_f32()).collect();
        let data: Vec<Complex64> = (0..system.n_antennas() * system.n_subcarriers())
            .map(|_| {
                let re = next_f32();
                Complex64::new(re, next_f32())
            })
            .collect();
        let h = CsiTensor::from_vec(system.n_boards(), system.n_subcarriers(), data)?;
        Ok(Some(CsiDatapoint { h, p, x, t }))
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<CsiDatapoint>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_record().transpose()
    }
}

/// Reads a whole container; trailing bytes after the declared records are
/// rejected.
pub fn read_dataset(source: impl Read) -> Result<Dataset> {
    let mut reader = DatasetReader::new(source)?;
    let mut dataset = Dataset::new(reader.metadata.system.clone());
    dataset.annotations = reader.metadata.annotations.clone();
    while let Some(point) = reader.read_record()? {
        dataset.push(point)?;
    }
    let mut probe = [0u8; 1];
    if read_full(&mut reader.source, &mut probe)? != 0 {
        return Err(Error::InvalidData("trailing bytes after the last record".into()));
    }
    Ok(dataset)
}

pub fn iter_records(source: impl Read) -> Result<DatasetReader<impl Read>> {
    DatasetReader::new(source)
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<u64> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn open(path: &Path) -> Result<DatasetReader<BufReader<File>>> {
    DatasetReader::new(BufReader::new(File::open(path)?))
}

struct HashSink(Sha256);

impl Write for HashSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// SHA-256 of the dataset's container encoding, hex.
pub fn dataset_digest(dataset: &Dataset) -> Result<String> {
    let mut sink = HashSink(Sha256::new());
    write_dataset(dataset, &mut sink)?;
    Ok(hex::encode(sink.0.finalize()))
}

/// Running min/mean/max of one scalar field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    min: f64,
    max: f64,
    sum: f64,
    n: u64,
}

impl Accumulator {
    fn push(&mut self, v: f64) {
        if self.n == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.sum += v;
        self.n += 1;
    }

    fn stats(&self) -> Option<FieldStats> {
        (self.n > 0).then(|| FieldStats {
            min: self.min,
            mean: self.sum / self.n as f64,
            max: self.max,
        })
    }
}

/// Header metadata plus per-field statistics, as printed by `csi info`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub metadata: Metadata,
    pub t: Option<FieldStats>,
    pub x: [Option<FieldStats>; 3],
    pub rssi_db: Option<FieldStats>,
    /// Per-datapoint mean `|h|^2` over antennas and subcarriers.
    pub csi_power: Option<FieldStats>,
}

pub fn summarize<R: Read>(mut reader: DatasetReader<R>) -> Result<DatasetSummary> {
    let mut t = Accumulator::default();
    let mut x = [Accumulator::default(); 3];
    let mut p = Accumulator::default();
    let mut power = Accumulator::default();
    while let Some(point) = reader.read_record()? {
        t.push(point.t);
        for (acc, v) in x.iter_mut().zip(point.x.iter()) {
            acc.push(*v);
        }
        point.p.iter().for_each(|&v| p.push(v));
        power.push(point.h.energy() / point.h.as_slice().len() as f64);
    }
    Ok(DatasetSummary {
        metadata: reader.metadata,
        t: t.stats(),
        x: x.map(|a| a.stats()),
        rssi_db: p.stats(),
        csi_power: power.stats(),
    })
}
