//! The forward charting function: a feedforward network from CSI features
//! to a 2-D chart, trained with a triplet loss on timestamp proximity.
//!
//! Gradients are computed by explicit backpropagation through the network;
//! features are precomputed and treated as constants.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csi::{CsiDatapoint, CsiTensor, Dataset};
use crate::dsp::{FeatureConfig, FeatureExtractor};
use crate::error::{Error, Result};
use crate::eval::Charter;
use crate::ingest;

pub const MODEL_MAGIC: &[u8; 8] = b"ESPFCF01";
const FEATURE_MAGIC: &[u8; 8] = b"ESPFEAT1";
const INIT_STREAM: u64 = u64::MAX;

/// Fully connected layer, `z = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartModel {
    layer_dims: Vec<usize>,
    layers: Vec<Dense>,
    leaky_slope: f64,
    feature_config: FeatureConfig,
}

/// Per-layer parameter gradients, same shapes as the model's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend(layer.weights.iter());
        out.extend(layer.bias.iter());
    }
    out
}

struct ForwardCache {
    /// Layer inputs; `inputs[0]` is the feature batch.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
}

impl ChartModel {
    fn check_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::config("layer_dims needs at least two nonzero sizes"));
        }
        if *layer_dims.last().expect("len >= 2") != 2 {
            return Err(Error::config("the chart is two-dimensional: last layer size must be 2"));
        }
        Ok(())
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(layer_dims: Vec<usize>, leaky_slope: f64, feature_config: FeatureConfig, seed: u64) -> Result<Self> {
        Self::check_dims(&layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                let weights = Array2::from_shape_simple_fn((w[1], w[0]), &mut draw);
                let bias = Array1::from_shape_simple_fn(w[1], &mut draw);
                Dense { weights, bias }
            })
            .collect();
        Ok(ChartModel {
            layer_dims,
            layers,
            leaky_slope,
            feature_config,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, leaky_slope: f64, feature_config: FeatureConfig) -> Result<Self> {
        let mut layer_dims = vec![layers.first().map_or(0, |l| l.weights.ncols())];
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.ncols() != *layer_dims.last().expect("nonempty")
                || layer.bias.len() != layer.weights.nrows()
            {
                return Err(Error::shape(format!("layer {i} does not chain with its predecessor")));
            }
            layer_dims.push(layer.weights.nrows());
        }
        Self::check_dims(&layer_dims)?;
        Ok(ChartModel {
            layer_dims,
            layers,
            leaky_slope,
            feature_config,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.feature_config
    }

    pub fn input_len(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.n_params()
            )));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer
                .weights
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = inputs[i].dot(&layer.weights.t()) + &layer.bias;
            if i < last {
                let slope = self.leaky_slope;
                inputs.push(z.mapv(|v| if v > 0.0 { v } else { slope * v }));
            }
            pre.push(z);
        }
        ForwardCache { inputs, pre }
    }

    /// Network output for a batch of feature rows, shape `(batch, 2)`.
    pub fn forward_features(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_len() {
            return Err(Error::shape(format!(
                "feature rows have {} columns, model expects {}",
                x.ncols(),
                self.input_len()
            )));
        }
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights.t()) + &layer.bias;
            a = if i < last {
                let slope = self.leaky_slope;
                z.mapv_into(|v| if v > 0.0 { v } else { slope * v })
            } else {
                z
            };
        }
        Ok(a)
    }

    /// Backpropagates `grad_out = dL/d(output)` through the cached pass.
    fn backward(&self, cache: &ForwardCache, grad_out: Array2<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let dw = delta.t().dot(&cache.inputs[i]);
            let db = delta.sum_axis(Axis(0));
            grads.push(Dense { weights: dw, bias: db });
            if i > 0 {
                let mut da = delta.dot(&self.layers[i].weights);
                let slope = self.leaky_slope;
                da.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                    if z <= 0.0 {
                        *g *= slope
                    }
                });
                delta = da;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Mean triplet loss over a batch of (anchor, positive, negative) feature
    /// rows and its gradient with respect to every parameter.
    pub fn triplet_loss_and_grad(
        &self,
        anchors: ArrayView2<f64>,
        positives: ArrayView2<f64>,
        negatives: ArrayView2<f64>,
        margin: f64,
    ) -> Result<(f64, Gradients)> {
        let batch = anchors.nrows();
        if positives.nrows() != batch || negatives.nrows() != batch || batch == 0 {
            return Err(Error::shape("triplet batches must be nonempty and equally sized"));
        }
        let stacked =
            ndarray::concatenate(Axis(0), &[anchors, positives, negatives]).map_err(|e| Error::shape(e.to_string()))?;
        if stacked.ncols() != self.input_len() {
            return Err(Error::shape("feature width does not match the model"));
        }
        let cache = self.forward_cached(stacked.view());
        let y = cache.pre.last().expect("at least one layer");
        let (loss, grad_y) = triplet_batch_grad(y.view(), batch, margin);
        Ok((loss, self.backward(&cache, grad_y)))
    }

    /// `fcf_forward`: chart position of one CSI tensor.
    pub fn forward(&self, h: &CsiTensor) -> Result<[f64; 2]> {
        let extractor = FeatureExtractor::new(self.feature_config, h.n_subcarriers())?;
        let f = extractor.tensor(h)?;
        let y =
            self.forward_features(ArrayView2::from_shape((1, f.len()), &f).map_err(|e| Error::shape(e.to_string()))?)?;
        Ok([y[[0, 0]], y[[0, 1]]])
    }

    /// Chart positions of datapoints, RSSI weighting included when the
    /// feature configuration asks for it.
    pub fn chart_points(&self, points: &[CsiDatapoint]) -> Result<Vec<[f64; 2]>> {
        let Some(first) = points.first() else {
            return Ok(Vec::new());
        };
        let features = compute_features(points, &self.feature_config, first.h.n_subcarriers())?;
        let y = self.forward_features(features.view())?;
        Ok(y.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }

    pub fn write(&self, out: &mut impl Write, config_digest: Option<String>) -> Result<()> {
        let header = ModelHeader {
            format_version: 1,
            layer_dims: self.layer_dims.clone(),
            activation: "leaky_relu".into(),
            leaky_slope: self.leaky_slope,
            feature_config: self.feature_config,
            config_digest,
            n_params: self.n_params(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        let mut blob = Vec::with_capacity(8 * self.n_params());
        for p in self.params_flat() {
            blob.extend_from_slice(&p.to_le_bytes());
        }
        out.write_all(&blob)?;
        Ok(())
    }

    pub fn read(input: &mut impl Read) -> Result<(Self, Option<String>)> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::BadMagic);
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut json)?;
        let header: ModelHeader = serde_json::from_slice(&json)?;
        if header.activation != "leaky_relu" {
            return Err(Error::Metadata(format!("unsupported activation {}", header.activation)));
        }
        let mut model = ChartModel::init(header.layer_dims, header.leaky_slope, header.feature_config, 0)?;
        if model.n_params() != header.n_params {
            return Err(Error::Metadata("parameter count does not match layer sizes".into()));
        }
        let mut blob = vec![0u8; 8 * header.n_params];
        input.read_exact(&mut blob).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Metadata("weight blob truncated".into()),
            _ => e.into(),
        })?;
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.set_params_flat(&params)?;
        Ok((model, header.config_digest))
    }

    pub fn save(&self, path: &Path, config_digest: Option<String>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf, config_digest)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let bytes = fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}

impl Charter for ChartModel {
    fn chart(&self, points: &[CsiDatapoint]) -> Result<Vec<[f64; 2]>> {
        self.chart_points(points)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    layer_dims: Vec<usize>,
    activation: String,
    leaky_slope: f64,
    feature_config: FeatureConfig,
    config_digest: Option<String>,
    n_params: usize,
}

/// `max(0, |y_a - y_p| - |y_a - y_n| + margin)`
pub fn triplet_loss(ya: [f64; 2], yp: [f64; 2], yn: [f64; 2], margin: f64) -> f64 {
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let v = dist(ya, yp) - dist(ya, yn) + margin;
    // not f64::max, which would hide a NaN from the divergence check
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Mean loss and `dL/dy` for outputs stacked as anchors, positives, negatives.
fn triplet_batch_grad(y: ArrayView2<f64>, batch: usize, margin: f64) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(y.raw_dim());
    let mut total = 0.0;
    let inv = 1.0 / batch as f64;
    for i in 0..batch {
        let ya = [y[[i, 0]], y[[i, 1]]];
        let yp = [y[[batch + i, 0]], y[[batch + i, 1]]];
        let yn = [y[[2 * batch + i, 0]], y[[2 * batch + i, 1]]];
        let loss = triplet_loss(ya, yp, yn, margin);
        total += loss;
        if loss <= 0.0 {
            continue;
        }
        let unit = |a: [f64; 2], b: [f64; 2]| {
            let d = (a[0] - b[0]).hypot(a[1] - b[1]);
            if d > 0.0 {
                [(a[0] - b[0]) / d, (a[1] - b[1]) / d]
            } else {
                [0.0, 0.0]
            }
        };
        let up = unit(ya, yp);
        let un = unit(ya, yn);
        for c in 0..2 {
            grad[[i, c]] += (up[c] - un[c]) * inv;
            grad[[batch + i, c]] -= up[c] * inv;
            grad[[2 * batch + i, c]] += un[c] * inv;
        }
    }
    (total * inv, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    /// Maximum anchor-positive time separation, seconds.
    pub tau_pos: f64,
    /// Minimum anchor-negative time separation, seconds; `>= tau_pos`.
    pub tau_neg: f64,
    /// Hinge margin, chart units.
    pub margin: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            tau_pos: 1.0,
            tau_neg: 10.0,
            margin: 1.0,
            batch_size: 128,
            steps: 2000,
            learning_rate: 3e-3,
            cosine_decay: true,
            seed: 0,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_pos > 0.0 && self.tau_pos.is_finite()) {
            return Err(Error::config("tau_pos must be positive"));
        }
        if !(self.tau_neg >= self.tau_pos && self.tau_neg.is_finite()) {
            return Err(Error::config("tau_neg must be >= tau_pos"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.cosine_decay && self.steps > 0 {
            self.learning_rate * 0.5 * (1.0 + (PI * step as f64 / self.steps as f64).cos())
        } else {
            self.learning_rate
        }
    }
}

/// Draws (anchor, positive, negative) index triplets from sorted timestamps.
///
/// Positives satisfy `0 < |t_p - t_a| <= tau_pos`, negatives
/// `|t_n - t_a| > tau_neg`. Anchors without an eligible positive or
/// negative are never drawn.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    times: &'a [f64],
    tau_pos: f64,
    tau_neg: f64,
    anchors: Vec<usize>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(times: &'a [f64], tau_pos: f64, tau_neg: f64) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::NoTriplets(format!(
                "{} datapoints, need at least 3",
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidData("timestamps are not sorted".into()));
        }
        if !(tau_pos > 0.0) || !(tau_neg >= tau_pos) {
            return Err(Error::config("need tau_pos > 0 and tau_neg >= tau_pos"));
        }
        let mut sampler = TripletSampler {
            times,
            tau_pos,
            tau_neg,
            anchors: Vec::new(),
        };
        sampler.anchors = (0..times.len())
            .filter(|&a| sampler.positive_count(a) > 0 && sampler.negative_count(a) > 0)
            .collect();
        if sampler.anchors.is_empty() {
            return Err(Error::NoTriplets(format!(
                "no datapoint has a positive within {tau_pos} s and a negative beyond {tau_neg} s"
            )));
        }
        Ok(sampler)
    }

    pub fn eligible_anchors(&self) -> &[usize] {
        &self.anchors
    }

    fn window(&self, a: usize, tau: f64) -> (usize, usize) {
        let ta = self.times[a];
        let lo = self.times.partition_point(|&t| ta - t > tau);
        let hi = self.times.partition_point(|&t| t - ta <= tau);
        (lo, hi)
    }

    fn same_time(&self, a: usize) -> (usize, usize) {
        let ta = self.times[a];
        (
            self.times.partition_point(|&t| t < ta),
            self.times.partition_point(|&t| t <= ta),
        )
    }

    /// Indices `j` with `0 < |t_j - t_a| <= tau_pos`, as two half-open ranges.
    pub fn positive_ranges(&self, a: usize) -> [(usize, usize); 2] {
        let (lo, hi) = self.window(a, self.tau_pos);
        let (eq_lo, eq_hi) = self.same_time(a);
        [(lo, eq_lo), (eq_hi, hi)]
    }

    fn positive_count(&self, a: usize) -> usize {
        self.positive_ranges(a).iter().map(|(s, e)| e - s).sum()
    }

    fn negative_count(&self, a: usize) -> usize {
        let (lo, hi) = self.window(a, self.tau_neg);
        lo + (self.times.len() - hi)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (usize, usize, usize) {
        let a = self.anchors[rng.random_range(0..self.anchors.len())];

        let [(p0, p1), (p2, p3)] = self.positive_ranges(a);
        let u = rng.random_range(0..(p1 - p0) + (p3 - p2));
        let p = if u < p1 - p0 { p0 + u } else { p2 + (u - (p1 - p0)) };

        let (lo, hi) = self.window(a, self.tau_neg);
        let u = rng.random_range(0..lo + (self.times.len() - hi));
        let n = if u < lo { u } else { hi + (u - lo) };
        (a, p, n)
    }
}

/// Generator for batch `stream` of a training run seeded with `seed`.
pub fn triplet_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `count` triplets for the given timestamps, deterministic in (`seed`, `stream`).
pub fn sample_triplets(
    times: &[f64],
    config: &TripletConfig,
    count: usize,
    stream: u64,
) -> Result<Vec<(usize, usize, usize)>> {
    let sampler = TripletSampler::new(times, config.tau_pos, config.tau_neg)?;
    let mut rng = triplet_rng(config.seed, stream);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// Network shape and activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_layers: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_layers: vec![128, 64, 32],
            leaky_slope: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub triplet: TripletConfig,
}

impl TrainConfig {
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean triplet loss of each step's batch, before the update.
    pub losses: Vec<f64>,
}

/// Feature matrix `(L, F)` of a set of datapoints.
pub fn compute_features(points: &[CsiDatapoint], config: &FeatureConfig, n_subcarriers: usize) -> Result<Array2<f64>> {
    let extractor = FeatureExtractor::new(*config, n_subcarriers)?;
    let n_boards = points.first().map_or(0, |p| p.h.n_boards());
    let width = config.feature_len(n_boards);
    let mut features = Array2::zeros((points.len(), width));
    for (l, point) in points.iter().enumerate() {
        let f = extractor.datapoint(point)?;
        if f.len() != width {
            return Err(Error::shape(format!(
                "datapoint {l} yields {} features, expected {width}",
                f.len()
            )));
        }
        features.row_mut(l).assign(&Array1::from(f));
    }
    Ok(features)
}

/// Loads the feature matrix of `dataset` from `cache_dir` when present,
/// otherwise computes and stores it. Entries are keyed by the dataset
/// content digest and the feature configuration.
pub fn cached_features(dataset: &Dataset, config: &FeatureConfig, cache_dir: &Path) -> Result<Array2<f64>> {
    let mut hasher = Sha256::new();
    hasher.update(ingest::dataset_digest(dataset)?.as_bytes());
    hasher.update(serde_json::to_vec(config)?);
    let path = cache_dir.join(format!("{}.feat", hex::encode(hasher.finalize())));
    if let Ok(bytes) = fs::read(&path) {
        if let Some(features) = decode_features(&bytes) {
            return Ok(features);
        }
    }
    let features = compute_features(dataset.points(), config, dataset.system.n_subcarriers())?;
    fs::create_dir_all(cache_dir)?;
    let mut bytes = Vec::with_capacity(24 + 8 * features.len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(features.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(features.ncols() as u64).to_le_bytes());
    for v in features.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, bytes)?;
    Ok(features)
}

fn decode_features(bytes: &[u8]) -> Option<Array2<f64>> {
    if bytes.len() < 24 || &bytes[..8] != FEATURE_MAGIC {
        return None;
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().ok()?) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().ok()?) as usize;
    let body = &bytes[24..];
    if body.len() != rows.checked_mul(cols)?.checked_mul(8)? {
        return None;
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).ok()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ChartModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut k = 0;
        for (layer, grad) in model.layers.iter_mut().zip(&grads.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = grad.weights.iter().chain(grad.bias.iter());
            for (p, &g) in params.zip(gs) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// Trains a chart model on precomputed features, one row per datapoint.
pub fn train_on_features(
    features: ArrayView2<f64>,
    times: &[f64],
    config: &TrainConfig,
) -> Result<(ChartModel, TrainingLog)> {
    config.triplet.validate()?;
    if features.nrows() != times.len() {
        return Err(Error::shape("one feature row per timestamp is required"));
    }
    let triplet = &config.triplet;
    let sampler = TripletSampler::new(times, triplet.tau_pos, triplet.tau_neg)?;

    let mut dims = vec![features.ncols()];
    dims.extend(&config.model.hidden_layers);
    dims.push(2);
    let mut model = ChartModel::init(dims, config.model.leaky_slope, config.features, triplet.seed)?;
    let mut adam = Adam::new(model.n_params());

    let batch = triplet.batch_size;
    let width = features.ncols();
    let mut xa = Array2::zeros((batch, width));
    let mut xp = Array2::zeros((batch, width));
    let mut xn = Array2::zeros((batch, width));
    let mut losses = Vec::with_capacity(triplet.steps);
    for step in 0..triplet.steps {
        let mut rng = triplet_rng(triplet.seed, step as u64);
        for i in 0..batch {
            let (a, p, n) = sampler.sample(&mut rng);
            xa.row_mut(i).assign(&features.row(a));
            xp.row_mut(i).assign(&features.row(p));
            xn.row_mut(i).assign(&features.row(n));
        }
        let (loss, grads) = model.triplet_loss_and_grad(xa.view(), xp.view(), xn.view(), triplet.margin)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        adam.step(&mut model, &grads, triplet.learning_rate_at(step));
    }
    Ok((model, TrainingLog { losses }))
}

/// Extracts features for every datapoint and trains the chart model.
pub fn train_fcf(dataset: &Dataset, config: &TrainConfig) -> Result<(ChartModel, TrainingLog)> {
    let features = compute_features(dataset.points(), &config.features, dataset.system.n_subcarriers())?;
    train_on_features(features.view(), &dataset.timestamps(), config)
}

/// Loss of a fixed batch of triplets under `model`, without gradients.
pub fn batch_loss(
    model: &ChartModel,
    features: ArrayView2<f64>,
    triplets: &[(usize, usize, usize)],
    margin: f64,
) -> Result<f64> {
    let y = model.forward_features(features)?;
    let row = |i: usize| [y[[i, 0]], y[[i, 1]]];
    Ok(triplets
        .iter()
        .map(|&(a, p, n)| triplet_loss(row(a), row(p), row(n), margin))
        .sum::<f64>()
        / triplets.len().max(1) as f64)
}
