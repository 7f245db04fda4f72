//! Brute-force reference implementations shared by the integration tests.
//! They follow the metric definitions literally and share no code with the
//! library.

#![allow(dead_code)]

use espcsi::{ArraySystem, CsiTensor, SPEED_OF_LIGHT};
use num_complex::Complex64;

pub fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `rank[j]` = 1-based position of j among all other points sorted by
/// distance from point i, ties broken by index; `rank[i] = 0`.
pub fn ranks(points: &[[f64; 2]], i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| {
        dist(&points[i], &points[a])
            .partial_cmp(&dist(&points[i], &points[b]))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; points.len()];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos + 1;
    }
    rank
}

/// 1 - 2/(N k (2N - 3k - 1)) * sum over i of sum over j in the k-neighborhood
/// in `from` but not in `to` of (rank_to(i, j) - k).
fn rank_quality(to: &[[f64; 2]], from: &[[f64; 2]], k: usize) -> f64 {
    let n = to.len();
    let mut total = 0.0;
    for i in 0..n {
        let r_to = ranks(to, i);
        let r_from = ranks(from, i);
        for j in 0..n {
            if j != i && r_from[j] <= k && r_to[j] > k {
                total += (r_to[j] - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * total
}

pub fn oracle_ct_tw(truth: &[[f64; 2]], chart: &[[f64; 2]], k: usize) -> (f64, f64) {
    // continuity: truth neighbors missing from the chart neighborhood,
    // ranked in the chart; trustworthiness the other way round
    (rank_quality(chart, truth, k), rank_quality(truth, chart, k))
}

pub fn oracle_ks(truth: &[[f64; 2]], chart: &[[f64; 2]]) -> f64 {
    let n = truth.len();
    let (mut sdd, mut shh, mut sdh) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&truth[i], &truth[j]);
            let dh = dist(&chart[i], &chart[j]);
            sdd += d * d;
            shh += dh * dh;
            sdh += d * dh;
        }
    }
    let beta = sdh / shh;
    let mut num = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&truth[i], &truth[j]);
            let dh = dist(&chart[i], &chart[j]);
            num += (beta * dh - d).powi(2);
        }
    }
    (num / sdd).sqrt()
}

pub fn oracle_mae_cep(truth: &[[f64; 2]], est: &[[f64; 2]]) -> (f64, f64) {
    let mut errors: Vec<f64> = truth.iter().zip(est).map(|(a, b)| dist(a, b)).collect();
    let mae = errors.iter().sum::<f64>() / errors.len() as f64;
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errors.len();
    let cep = if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    };
    (mae, cep)
}

/// Delay-and-sum power of one board at azimuth `theta`, with steering
/// phases advanced subcarrier by subcarrier.
pub fn oracle_beam_power(h: &CsiTensor, system: &ArraySystem, board: usize, theta: f64) -> f64 {
    let pose = &system.boards()[board];
    let dir = pose.normal() * theta.cos() + pose.col_axis * theta.sin();
    let n_sub = system.n_subcarriers();
    let f0 = system.subcarrier_frequency(0).unwrap();
    let df = system.subcarrier_spacing();
    let mut steer = Vec::new();
    let mut step = Vec::new();
    for row in 0..2 {
        for col in 0..4 {
            let p = system.antenna_position(board, row, col).unwrap() - pose.center;
            let proj = dir.dot(&p);
            let phase0 = -2.0 * std::f64::consts::PI * f0 / SPEED_OF_LIGHT * proj;
            let dphase = -2.0 * std::f64::consts::PI * df / SPEED_OF_LIGHT * proj;
            steer.push(Complex64::new(phase0.cos(), phase0.sin()));
            step.push(Complex64::new(dphase.cos(), dphase.sin()));
        }
    }
    let data = h.board(board);
    let mut power = 0.0;
    for n in 0..n_sub {
        let mut y = Complex64::new(0.0, 0.0);
        for a in 0..8 {
            y += steer[a] * data[a * n_sub + n];
            steer[a] *= step[a];
        }
        power += y.norm_sqr();
    }
    power
}

/// Argmax of [`oracle_beam_power`] over a uniform degree grid.
pub fn oracle_aoa(h: &CsiTensor, system: &ArraySystem, board: usize, step_deg: f64) -> f64 {
    let n = (180.0 / step_deg).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=n {
        let theta = (-90.0 + i as f64 * step_deg).to_radians();
        let p = oracle_beam_power(h, system, board, theta);
        if p > best.0 {
            best = (p, theta);
        }
    }
    best.1
}

pub fn bits_equal(a: &CsiTensor, b: &CsiTensor) -> bool {
    a.shape() == b.shape()
        && a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
}
