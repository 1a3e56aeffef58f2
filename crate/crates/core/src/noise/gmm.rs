//! One-dimensional four-component Gaussian mixtures fitted by EM.

use alloc::vec::Vec;
use core::f64::consts::PI;

use super::fit::quantile_type7;
use super::{GaussianComponent, GMM_COMPONENTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once `|ΔLL| <= relative_tolerance * |LL|`.
    pub relative_tolerance: f64,
    /// Variance floor as a multiple of the squared sample range.
    pub variance_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iterations: 200, relative_tolerance: 1e-8, variance_floor: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    /// Sorted by mean.
    pub components: [GaussianComponent; GMM_COMPONENTS],
    /// Log-likelihood evaluated before each M-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// EM from deterministic initial values: means at the midpoints of the four
/// sample quartiles (levels 1/8, 3/8, 5/8, 7/8), equal weights, and every
/// variance set to the sample variance.
pub fn fit_gmm(samples: &[f64], cfg: &EmConfig) -> Result<GmmFit> {
    let n = samples.len();
    if n < GMM_COMPONENTS {
        return Err(Error::Fit(alloc::format!(
            "a {GMM_COMPONENTS}-component mixture needs at least {GMM_COMPONENTS} samples, got {n}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[n - 1] - sorted[0];
    let w0 = 1.0 / GMM_COMPONENTS as f64;
    if range == 0.0 {
        let c = GaussianComponent { weight: w0, mean: sorted[0], variance: 0.0 };
        return Ok(GmmFit { components: [c; GMM_COMPONENTS], log_likelihood: Vec::new(), iterations: 0 });
    }

    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let floor = cfg.variance_floor * range * range;
    let mut comps = [GaussianComponent { weight: w0, mean: 0.0, variance: var.max(floor) }; GMM_COMPONENTS];
    for (k, c) in comps.iter_mut().enumerate() {
        c.mean = quantile_type7(&sorted, (2 * k + 1) as f64 / (2 * GMM_COMPONENTS) as f64);
    }

    let mut resp = alloc::vec![0.0f64; n * GMM_COMPONENTS];
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        let ll = e_step(samples, &comps, &mut resp);
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.relative_tolerance * p.abs() {
                break;
            }
        }
        m_step(samples, &resp, &mut comps, floor);
        iterations += 1;
        prev = Some(ll);
    }

    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    Ok(GmmFit { components: comps, log_likelihood: trace, iterations })
}

/// Log-likelihood of the mixture over the samples.
pub fn log_likelihood(samples: &[f64], comps: &[GaussianComponent; GMM_COMPONENTS]) -> f64 {
    samples
        .iter()
        .map(|&x| {
            let mut lp = [0.0; GMM_COMPONENTS];
            for (k, c) in comps.iter().enumerate() {
                lp[k] = log_weighted_density(x, c);
            }
            log_sum_exp(&lp)
        })
        .sum()
}

fn log_weighted_density(x: f64, c: &GaussianComponent) -> f64 {
    if c.weight <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let d = x - c.mean;
    libm::log(c.weight) - 0.5 * libm::log(2.0 * PI * c.variance) - d * d / (2.0 * c.variance)
}

fn log_sum_exp(lp: &[f64]) -> f64 {
    let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(lp.iter().map(|&v| libm::exp(v - m)).sum::<f64>())
}

fn e_step(samples: &[f64], comps: &[GaussianComponent; GMM_COMPONENTS], resp: &mut [f64]) -> f64 {
    let mut ll = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let mut lp = [0.0; GMM_COMPONENTS];
        for (k, c) in comps.iter().enumerate() {
            lp[k] = log_weighted_density(x, c);
        }
        let norm = log_sum_exp(&lp);
        ll += norm;
        for k in 0..GMM_COMPONENTS {
            resp[i * GMM_COMPONENTS + k] = libm::exp(lp[k] - norm);
        }
    }
    ll
}

fn m_step(samples: &[f64], resp: &[f64], comps: &mut [GaussianComponent; GMM_COMPONENTS], floor: f64) {
    let n = samples.len() as f64;
    for (k, c) in comps.iter_mut().enumerate() {
        let mut nk = 0.0;
        let mut sx = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let r = resp[i * GMM_COMPONENTS + k];
            nk += r;
            sx += r * x;
        }
        if nk <= f64::MIN_POSITIVE {
            // an empty component keeps its location and shape
            c.weight = 0.0;
            continue;
        }
        let mu = sx / nk;
        let mut sv = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let d = x - mu;
            sv += resp[i * GMM_COMPONENTS + k] * d * d;
        }
        c.weight = nk / n;
        c.mean = mu;
        c.variance = (sv / nk).max(floor);
    }
}
