//! Chart registration and chart quality metrics.
//!
//! Rank-based metrics break distance ties by datapoint index so that
//! results are deterministic; CT/TW are discontinuous at ties.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiDatapoint, Dataset};
use crate::error::{Error, Result};

/// `x = A y + b`, chart coordinates to physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            a: Matrix2::identity(),
            b: Vector2::zeros(),
        }
    }

    pub fn apply(&self, y: [f64; 2]) -> [f64; 2] {
        let x = self.a * Vector2::from(y) + self.b;
        [x.x, x.y]
    }

    pub fn residual(&self, chart: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
        chart
            .iter()
            .zip(truth)
            .map(|(y, x)| {
                let e = self.apply(*y);
                (e[0] - x[0]).powi(2) + (e[1] - x[1]).powi(2)
            })
            .sum()
    }
}

pub fn apply_affine(t: &AffineTransform, y: [f64; 2]) -> [f64; 2] {
    t.apply(y)
}

/// Least-squares affine map from chart to truth coordinates, solved with
/// normal equations on mean-centered data.
pub fn fit_affine(chart: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<AffineTransform> {
    if chart.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} chart points vs {} truth points",
            chart.len(),
            truth.len()
        )));
    }
    if chart.len() < 3 {
        return Err(Error::degenerate("degenerate chart: fewer than 3 points"));
    }
    let n = chart.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        pts.iter()
            .fold(Vector2::zeros(), |acc: Vector2<f64>, p| acc + Vector2::from(*p))
            / n
    };
    let y_mean = mean(chart);
    let x_mean = mean(truth);

    let mut yy = Matrix2::zeros();
    let mut xy = Matrix2::zeros();
    for (y, x) in chart.iter().zip(truth) {
        let yc = Vector2::from(*y) - y_mean;
        let xc = Vector2::from(*x) - x_mean;
        yy += yc * yc.transpose();
        xy += xc * yc.transpose();
    }
    let scale = yy.trace();
    if !(scale > 0.0) || !scale.is_finite() || yy.determinant() <= 1e-12 * scale * scale {
        return Err(Error::degenerate("degenerate chart: design matrix is rank deficient"));
    }
    let inv = yy
        .try_inverse()
        .ok_or_else(|| Error::degenerate("degenerate chart: design matrix is rank deficient"))?;
    let a = xy * inv;
    let b = x_mean - a * y_mean;
    Ok(AffineTransform { a, b })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_pairs<P: AsRef<[f64]>, Q: AsRef<[f64]>>(truth: &[P], chart: &[Q]) -> Result<()> {
    if truth.len() != chart.len() {
        return Err(Error::shape(format!(
            "{} truth points vs {} chart points",
            truth.len(),
            chart.len()
        )));
    }
    Ok(())
}

/// Neighbor rank of every point as seen from `i`: `rank[j]` in `1..N`
/// (`rank[i] = 0`), ties broken by index.
fn ranks_from<P: AsRef<[f64]>>(points: &[P], i: usize, order: &mut Vec<(f64, usize)>, rank: &mut [usize]) {
    order.clear();
    let origin = points[i].as_ref();
    order.extend(
        points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, p)| (sq_dist(origin, p.as_ref()), j)),
    );
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    rank[i] = 0;
    for (r, &(_, j)) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
}

/// Continuity and trustworthiness of `chart` with respect to `truth` for
/// neighborhood size `k`.
pub fn continuity_trustworthiness<P, Q>(truth: &[P], chart: &[Q], k: usize) -> Result<(f64, f64)>
where
    P: AsRef<[f64]> + Sync,
    Q: AsRef<[f64]> + Sync,
{
    check_pairs(truth, chart)?;
    let n = truth.len();
    if k == 0 || !(n as f64 > 1.5 * k as f64 + 1.0) {
        return Err(Error::config(format!("k = {k} out of range for {n} points")));
    }

    let (ct_sum, tw_sum) = (0..n)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(n), vec![0usize; n], vec![0usize; n]),
            |(order, truth_rank, chart_rank), i| {
                ranks_from(truth, i, order, truth_rank);
                ranks_from(chart, i, order, chart_rank);
                let mut ct = 0u64;
                let mut tw = 0u64;
                for j in (0..n).filter(|&j| j != i) {
                    let (rt, rc) = (truth_rank[j], chart_rank[j]);
                    if rc <= k && rt > k {
                        tw += (rt - k) as u64;
                    }
                    if rt <= k && rc > k {
                        ct += (rc - k) as u64;
                    }
                }
                (ct, tw)
            },
        )
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let (n, k) = (n as f64, k as f64);
    let norm = 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0));
    Ok((1.0 - norm * ct_sum as f64, 1.0 - norm * tw_sum as f64))
}

/// Kruskal's stress with the closed-form optimal chart scale.
pub fn kruskal_stress<P, Q>(truth: &[P], chart: &[Q]) -> Result<f64>
where
    P: AsRef<[f64]> + Sync,
    Q: AsRef<[f64]> + Sync,
{
    check_pairs(truth, chart)?;
    let n = truth.len();
    if n < 2 {
        return Err(Error::config("Kruskal stress needs at least 2 points"));
    }
    let pair_sums = |f: &(dyn Fn(f64, f64) -> f64 + Sync)| -> f64 {
        (0..n)
            .into_par_iter()
            .map(|i| {
                ((i + 1)..n)
                    .map(|j| {
                        let d = sq_dist(truth[i].as_ref(), truth[j].as_ref()).sqrt();
                        let dh = sq_dist(chart[i].as_ref(), chart[j].as_ref()).sqrt();
                        f(d, dh)
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum()
    };
    let cross = pair_sums(&|d, dh| d * dh);
    let chart_sq = pair_sums(&|_, dh| dh * dh);
    let truth_sq = pair_sums(&|d, _| d * d);
    if !(chart_sq > 0.0) {
        return Err(Error::degenerate("chart has zero variance"));
    }
    if !(truth_sq > 0.0) {
        return Err(Error::degenerate("truth positions are all identical"));
    }
    let beta = cross / chart_sq;
    let stress = pair_sums(&|d, dh| (beta * dh - d).powi(2));
    Ok((stress / truth_sq).sqrt())
}

/// Mean and median radial error between registered chart and truth.
pub fn mae_cep<P: AsRef<[f64]>, Q: AsRef<[f64]>>(truth: &[P], estimate: &[Q]) -> Result<(f64, f64)> {
    check_pairs(truth, estimate)?;
    if truth.is_empty() {
        return Err(Error::config("MAE/CEP need at least one point"));
    }
    let mut radii: Vec<f64> = truth
        .iter()
        .zip(estimate)
        .map(|(x, e)| sq_dist(x.as_ref(), e.as_ref()).sqrt())
        .collect();
    let mae = radii.iter().sum::<f64>() / radii.len() as f64;
    radii.sort_by(f64::total_cmp);
    let mid = radii.len() / 2;
    let cep = if radii.len() % 2 == 1 {
        radii[mid]
    } else {
        0.5 * (radii[mid - 1] + radii[mid])
    };
    Ok((mae, cep))
}

/// Default neighborhood size: `max(10, round(0.01 N))`, reduced when `N`
/// is too small for that `k`.
pub fn default_k(n: usize) -> usize {
    let mut k = 10.max((0.01 * n as f64).round() as usize);
    while k > 1 && !(n as f64 > 1.5 * k as f64 + 1.0) {
        k -= 1;
    }
    k
}

/// Anything that maps a datapoint to a chart position.
pub trait Charter {
    fn chart(&self, points: &[CsiDatapoint]) -> Result<Vec<[f64; 2]>>;
}

/// The identity chart: returns ground-truth positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthCharter;

impl Charter for TruthCharter {
    fn chart(&self, points: &[CsiDatapoint]) -> Result<Vec<[f64; 2]>> {
        Ok(points.iter().map(CsiDatapoint::position_2d).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ct: f64,
    pub tw: f64,
    pub ks: f64,
    pub mae: f64,
    pub cep: f64,
    pub k_neighbors: usize,
    /// Points used for the rank and stress metrics.
    pub n_eval: usize,
    /// Points used for registration, MAE and CEP.
    pub n_total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Neighborhood size for CT/TW; `None` picks [`default_k`].
    pub k: Option<usize>,
    /// Maximum points for the quadratic-cost metrics.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: None,
            subsample: 5000,
            seed: 0,
        }
    }
}

/// Chart coordinates, registration and report of one evaluation run.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub transform: AffineTransform,
    pub chart: Vec<[f64; 2]>,
    pub registered: Vec<[f64; 2]>,
    pub subsample: Vec<usize>,
}

/// Charts every datapoint, registers the chart to the planar ground truth
/// over all points, reports MAE/CEP over all points and CT/TW/KS (on the
/// raw chart) over a seeded subsample.
pub fn evaluate(dataset: &Dataset, charter: &dyn Charter, config: &EvalConfig) -> Result<Evaluation> {
    let truth = dataset.positions_2d();
    let chart = charter.chart(dataset.points())?;
    check_pairs(&truth, &chart)?;
    let transform = fit_affine(&chart, &truth)?;
    let registered: Vec<[f64; 2]> = chart.iter().map(|y| transform.apply(*y)).collect();
    let (mae, cep) = mae_cep(&truth, &registered)?;

    let n = truth.len();
    let subsample: Vec<usize> = if n > config.subsample {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut idx = sample(&mut rng, n, config.subsample).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let sub_truth: Vec<[f64; 2]> = subsample.iter().map(|&i| truth[i]).collect();
    let sub_chart: Vec<[f64; 2]> = subsample.iter().map(|&i| chart[i]).collect();
    let k = config.k.unwrap_or_else(|| default_k(subsample.len()));
    let (ct, tw) = continuity_trustworthiness(&sub_truth, &sub_chart, k)?;
    let ks = kruskal_stress(&sub_truth, &sub_chart)?;

    Ok(Evaluation {
        report: MetricReport {
            ct,
            tw,
            ks,
            mae,
            cep,
            k_neighbors: k,
            n_eval: subsample.len(),
            n_total: n,
        },
        transform,
        chart,
        registered,
        subsample,
    })
}

/// Scatter-ready CSV of chart and registered chart next to the truth.
/// `hue` is the angle of the truth position around the truth centroid,
/// in turns, so that colors carry over between truth and chart plots.
pub fn write_scatter_csv(out: &mut impl Write, dataset: &Dataset, evaluation: &Evaluation) -> Result<()> {
    let truth = dataset.positions_2d();
    let n = truth.len().max(1) as f64;
    let cx = truth.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = truth.iter().map(|p| p[1]).sum::<f64>() / n;
    writeln!(out, "l,t,x1,x2,y1,y2,xhat1,xhat2,hue")?;
    for (l, point) in dataset.points().iter().enumerate() {
        let [x1, x2] = truth[l];
        let [y1, y2] = evaluation.chart[l];
        let [e1, e2] = evaluation.registered[l];
        let hue = ((x2 - cy).atan2(x1 - cx) / std::f64::consts::TAU).rem_euclid(1.0);
        writeln!(out, "{l},{},{x1},{x2},{y1},{y2},{e1},{e2},{hue:.6}", point.t)?;
    }
    Ok(())
}
