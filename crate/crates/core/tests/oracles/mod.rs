//! Independent reference implementations shared by the oracle suites.
#![allow(dead_code)]

use std::collections::VecDeque;

use eddyscope_core::grid::{Dims, ScalarGrid};
use eddyscope_core::tf::{ControlPoint, TransferFunction};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Piecewise-linear evaluation written directly from the control points.
pub fn tf_oracle(points: &[(f64, [f64; 4])], x: f64) -> [f64; 4] {
    if x <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        let ((s0, c0), (s1, c1)) = (w[0], w[1]);
        if x <= s1 {
            let t = (x - s0) / (s1 - s0);
            return std::array::from_fn(|k| c0[k] + t * (c1[k] - c0[k]));
        }
    }
    points[points.len() - 1].1
}

/// Mean of the TF over `[lo, hi]` by clipping each linear piece.
pub fn uniform_oracle(points: &[(f64, [f64; 4])], lo: f64, hi: f64) -> [f64; 4] {
    if hi <= lo {
        return tf_oracle(points, lo);
    }
    let mut acc = [0.0; 4];
    let mut pieces = vec![(f64::NEG_INFINITY, points[0].0)];
    pieces.extend(points.windows(2).map(|w| (w[0].0, w[1].0)));
    pieces.push((points[points.len() - 1].0, f64::INFINITY));
    for (a, b) in pieces {
        let (a, b) = (a.max(lo), b.min(hi));
        if b > a {
            let (fa, fb) = (tf_oracle(points, a), tf_oracle(points, b));
            for k in 0..4 {
                acc[k] += 0.5 * (fa[k] + fb[k]) * (b - a);
            }
        }
    }
    acc.map(|v| v / (hi - lo))
}

pub fn random_tf(rng: &mut ChaCha8Rng) -> (TransferFunction, Vec<(f64, [f64; 4])>) {
    let n = rng.random_range(2..7);
    let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let pts: Vec<(f64, [f64; 4])> = s.iter().map(|&s| (s, std::array::from_fn(|_| rng.random_range(0.0..1.0)))).collect();
    let tf = TransferFunction::new(pts.iter().map(|(s, c)| ControlPoint::new(*s, c[0], c[1], c[2], c[3])).collect())
        .unwrap();
    (tf, pts)
}

/// Stratified Monte Carlo estimate with an i.i.d. standard-error bound.
pub fn mc_oracle(points: &[(f64, [f64; 4])], n: usize, inv_cdf: impl Fn(f64) -> f64) -> ([f64; 4], [f64; 4]) {
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        let c = tf_oracle(points, inv_cdf(u));
        for k in 0..4 {
            sum[k] += c[k];
            sq[k] += c[k] * c[k];
        }
    }
    let nf = n as f64;
    let mean = sum.map(|s| s / nf);
    let se = std::array::from_fn(|k| ((sq[k] / nf - mean[k] * mean[k]).max(0.0) / nf).sqrt());
    (mean, se)
}

pub fn assert_within(got: [f64; 4], mean: [f64; 4], se: [f64; 4], extra: f64, what: &str) {
    for k in 0..4 {
        let tol = 3.0 * se[k] + extra + 1e-12;
        assert!((got[k] - mean[k]).abs() <= tol, "{what} channel {k}: {} vs {} (tol {tol})", got[k], mean[k]);
    }
}

pub fn neighbors(nx: usize, ny: usize, p: usize) -> Vec<usize> {
    let (x, y) = ((p % nx) as i64, (p / nx) as i64);
    let mut out = Vec::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (qx, qy) = (x + dx, y + dy);
            if qx >= 0 && qy >= 0 && qx < nx as i64 && qy < ny as i64 {
                out.push((qx + qy * nx as i64) as usize);
            }
        }
    }
    out
}

pub fn above(v: &[f32], a: usize, b: usize) -> bool {
    v[a] > v[b] || (v[a] == v[b] && a > b)
}

/// Walks uphill from every pixel independently.
pub fn ascent_oracle(nx: usize, ny: usize, v: &[f32]) -> Vec<usize> {
    (0..nx * ny)
        .map(|start| {
            let mut p = start;
            loop {
                let mut up: Vec<usize> = neighbors(nx, ny, p).into_iter().filter(|&q| above(v, q, p)).collect();
                if up.is_empty() {
                    return p;
                }
                up.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
                p = up[0];
            }
        })
        .collect()
}

/// For each maximum: the highest level at which its superlevel component
/// (by flood fill) reaches a pixel above it in the total order.
pub fn persistence_oracle(nx: usize, ny: usize, v: &[f32], maxima: &[usize]) -> Vec<f64> {
    let mut levels: Vec<f32> = v.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let lowest = *levels.last().unwrap() as f64;
    maxima
        .iter()
        .map(|&m| {
            for &t in &levels {
                if t > v[m] {
                    continue;
                }
                let mut seen = vec![false; nx * ny];
                let mut queue = VecDeque::from([m]);
                seen[m] = true;
                let mut found = false;
                while let Some(p) = queue.pop_front() {
                    if above(v, p, m) {
                        found = true;
                        break;
                    }
                    for q in neighbors(nx, ny, p) {
                        if !seen[q] && v[q] >= t {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                }
                if found {
                    return v[m] as f64 - t as f64;
                }
            }
            v[m] as f64 - lowest
        })
        .collect()
}

pub fn random_distinct(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> ScalarGrid {
    let mut values: Vec<f32> = (0..nx * ny).map(|i| i as f32 * 0.25).collect();
    values.shuffle(rng);
    ScalarGrid::new(Dims::planar(nx, ny).unwrap(), values).unwrap()
}


/// Seeded Monte Carlo with one jittered draw per stratum of `[0, 1)`,
/// pushed through `inv_cdf`. The returned error is the i.i.d. standard
/// error of the same draws, which bounds the stratified one from above.
pub fn mc_seeded(
    points: &[(f64, [f64; 4])],
    n: usize,
    rng: &mut ChaCha8Rng,
    inv_cdf: impl Fn(f64) -> f64,
) -> ([f64; 4], [f64; 4]) {
    // compensated sums keep a million equal terms exact
    let mut sum = [Neumaier::default(); 4];
    let mut sq = [Neumaier::default(); 4];
    for i in 0..n {
        let u = (i as f64 + rng.random::<f64>()) / n as f64;
        let c = tf_oracle(points, inv_cdf(u));
        for k in 0..4 {
            sum[k].add(c[k]);
            sq[k].add(c[k] * c[k]);
        }
    }
    let nf = n as f64;
    let mean = sum.map(|s| s.total() / nf);
    let se = std::array::from_fn(|k| ((sq[k].total() / nf - mean[k] * mean[k]).max(0.0) / nf).sqrt());
    (mean, se)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Inverse CDF through `((i + 0.5) / Q, q_i)`, flat beyond the end levels.
pub fn quantile_inv(q: &[f64]) -> impl Fn(f64) -> f64 + '_ {
    let n = q.len() as f64;
    move |u: f64| {
        let x = u * n - 0.5;
        if x <= 0.0 {
            return q[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= q.len() {
            return q[q.len() - 1];
        }
        let t = x - i as f64;
        q[i] + t * (q[i + 1] - q[i])
    }
}

/// Sweeps pixels from high to low keeping an explicit component id per
/// pixel; when components touch, every pixel of the younger one is
/// relabeled. Returns `(peak pixel, persistence)` sorted by pixel.
pub fn sorted_merge_oracle(nx: usize, ny: usize, v: &[f32]) -> Vec<(usize, f64)> {
    let n = nx * ny;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| if above(v, a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
    let mut comp: Vec<Option<usize>> = vec![None; n];
    let mut peaks: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for &p in &order {
        let mut touching: Vec<usize> = neighbors(nx, ny, p).into_iter().filter_map(|q| comp[q]).collect();
        touching.sort_unstable();
        touching.dedup();
        let Some(&oldest) = touching.iter().max_by(|&&a, &&b| {
            if above(v, peaks[a], peaks[b]) { std::cmp::Ordering::Greater } else { std::cmp::Ordering::Less }
        }) else {
            comp[p] = Some(peaks.len());
            peaks.push(p);
            continue;
        };
        for &c in touching.iter().filter(|&&c| c != oldest) {
            out.push((peaks[c], v[peaks[c]] as f64 - v[p] as f64));
            for slot in comp.iter_mut().filter(|s| **s == Some(c)) {
                *slot = Some(oldest);
            }
        }
        comp[p] = Some(oldest);
    }
    let global = peaks[comp[order[0]].unwrap()];
    out.push((global, v[global] as f64 - v[order[n - 1]] as f64));
    out.sort_unstable_by_key(|e| e.0);
    out
}
