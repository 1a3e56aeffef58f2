//! Expected classification `E[TF(X)]` per channel.

use core::f64::consts::PI;

use super::PointDistribution;
use crate::tf::{Rgba, TransferFunction};

/// Gaussian quadrature covers `μ ± 6σ`.
pub const GAUSSIAN_TRUNCATION: f64 = 6.0;
/// Absolute tolerance of the Gaussian quadrature, per channel.
pub const GAUSSIAN_ABS_TOL: f64 = 1e-6;

const MAX_DEPTH: u32 = 40;

pub fn expected_tf(point: &PointDistribution, tf: &TransferFunction) -> Rgba {
    if let Some(v) = point.degenerate_value() {
        return tf.eval(v);
    }
    match point {
        PointDistribution::Mean(m) => tf.eval(*m),
        PointDistribution::Uniform { lo, hi } => tf.mean_over(*lo, *hi),
        PointDistribution::Gaussian { mean, variance } => gaussian_expectation(*mean, *variance, tf),
        PointDistribution::Gmm(comps) => {
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            let mut acc = [0.0; 4];
            for c in comps.iter().filter(|c| c.weight > 0.0) {
                let e = gaussian_expectation(c.mean, c.variance, tf);
                for ch in 0..4 {
                    acc[ch] += c.weight * e[ch];
                }
            }
            acc.map(|v| v / total)
        }
        PointDistribution::Quantile(q) => quantile_expectation(q, tf),
    }
}

/// The quantile representation is read as a piecewise-uniform density:
/// mass `1/Q` spread uniformly between consecutive levels and `1/(2Q)`
/// held at each end level. This is the distribution that
/// inverse-CDF sampling through `(p_i, q_i)` with flat extension draws from.
fn quantile_expectation(q: &[f64], tf: &TransferFunction) -> Rgba {
    let n = q.len() as f64;
    let end = 0.5 / n;
    let (first, last) = (tf.eval(q[0]), tf.eval(q[q.len() - 1]));
    let mut acc = [0.0; 4];
    for ch in 0..4 {
        acc[ch] = end * (first[ch] + last[ch]);
    }
    for w in q.windows(2) {
        let m = tf.mean_over(w[0], w[1]);
        for ch in 0..4 {
            acc[ch] += m[ch] / n;
        }
    }
    acc
}

#[inline]
fn std_normal_pdf(t: f64) -> f64 {
    libm::exp(-0.5 * t * t) / libm::sqrt(2.0 * PI)
}

/// Integrand in standardized units: `(TF(μ + σt) φ(t), φ(t))`.
#[derive(Clone, Copy)]
struct Sample([f64; 5]);

impl Sample {
    fn at(tf: &TransferFunction, mean: f64, sd: f64, t: f64) -> Self {
        let p = std_normal_pdf(t);
        let c = tf.eval(mean + sd * t);
        Sample([c[0] * p, c[1] * p, c[2] * p, c[3] * p, p])
    }
}

fn simpson(a: Sample, m: Sample, b: Sample, h: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = h / 6.0 * (a.0[i] + 4.0 * m.0[i] + b.0[i]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    tf: &TransferFunction,
    mean: f64,
    sd: f64,
    a: f64,
    b: f64,
    fa: Sample,
    fm: Sample,
    fb: Sample,
    whole: [f64; 5],
    tol: f64,
    depth: u32,
    acc: &mut [f64; 5],
) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = Sample::at(tf, mean, sd, lm);
    let frm = Sample::at(tf, mean, sd, rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (0..5).map(|i| (left[i] + right[i] - whole[i]).abs()).fold(0.0, f64::max);
    if depth == 0 || err <= 15.0 * tol {
        for i in 0..5 {
            acc[i] += left[i] + right[i] + (left[i] + right[i] - whole[i]) / 15.0;
        }
        return;
    }
    adaptive(tf, mean, sd, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, acc);
    adaptive(tf, mean, sd, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, acc);
}

/// `E[TF(X)]` for `X ~ N(mean, variance)` by adaptive Simpson quadrature
/// over `[-6, 6]` standard deviations, split at the TF control points and
/// normalized by the integrated density over the same partition.
pub fn gaussian_expectation(mean: f64, variance: f64, tf: &TransferFunction) -> Rgba {
    if variance <= 0.0 {
        return tf.eval(mean);
    }
    let sd = libm::sqrt(variance);
    let (t0, t1) = (-GAUSSIAN_TRUNCATION, GAUSSIAN_TRUNCATION);
    let mut cuts: smallvec::SmallVec<[f64; 16]> = smallvec::SmallVec::new();
    cuts.push(t0);
    for p in tf.points() {
        let t = (p.s - mean) / sd;
        if t > t0 && t < t1 {
            cuts.push(t);
        }
    }
    cuts.push(t1);
    let span = t1 - t0;
    let mut acc = [0.0; 5];
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let fa = Sample::at(tf, mean, sd, a);
        let fb = Sample::at(tf, mean, sd, b);
        let fm = Sample::at(tf, mean, sd, 0.5 * (a + b));
        let whole = simpson(fa, fm, fb, b - a);
        // tolerance shared in proportion to segment length
        let tol = 0.1 * GAUSSIAN_ABS_TOL * (b - a) / span;
        adaptive(tf, mean, sd, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut acc);
    }
    let mass = acc[4];
    [acc[0] / mass, acc[1] / mass, acc[2] / mass, acc[3] / mass]
}
