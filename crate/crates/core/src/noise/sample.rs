use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::PointDistribution;

/// `n` seeded draws from a point distribution.
pub fn sample(point: &PointDistribution, seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    sample_into(point, &mut rng, n, &mut out);
    out
}

/// Appends `n` draws to `out` using the caller's generator.
pub fn sample_into<R: Rng + ?Sized>(point: &PointDistribution, rng: &mut R, n: usize, out: &mut Vec<f64>) {
    for _ in 0..n {
        out.push(draw(point, rng));
    }
}

fn draw<R: Rng + ?Sized>(point: &PointDistribution, rng: &mut R) -> f64 {
    match point {
        PointDistribution::Mean(m) => *m,
        PointDistribution::Uniform { lo, hi } => {
            let u: f64 = rng.random();
            lo + u * (hi - lo)
        }
        PointDistribution::Gaussian { mean, variance } => {
            let z: f64 = rng.sample(StandardNormal);
            mean + libm::sqrt(variance.max(0.0)) * z
        }
        PointDistribution::Gmm(comps) => {
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = comps.len() - 1;
            for (k, c) in comps.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            // skip trailing zero-weight components that rounding could select
            while comps[pick].weight <= 0.0 && pick > 0 {
                pick -= 1;
            }
            let c = &comps[pick];
            let z: f64 = rng.sample(StandardNormal);
            c.mean + libm::sqrt(c.variance.max(0.0)) * z
        }
        PointDistribution::Quantile(q) => {
            let u: f64 = rng.random();
            quantile_inverse_cdf(q, u)
        }
    }
}

/// Piecewise-linear inverse CDF through `((i - 0.5) / Q, q_i)`, flat beyond
/// the end levels.
pub(crate) fn quantile_inverse_cdf(q: &[f64], u: f64) -> f64 {
    let n = q.len();
    let h = u * n as f64 - 0.5;
    if h <= 0.0 {
        return q[0];
    }
    if h >= (n - 1) as f64 {
        return q[n - 1];
    }
    let i = libm::floor(h) as usize;
    let t = h - i as f64;
    q[i] + t * (q[i + 1] - q[i])
}
