use alloc::format;
use alloc::vec::Vec;

use super::gmm::{fit_gmm, EmConfig};
use super::{
    DistributionSummary, GaussianComponent, ModelKind, PointDistribution, SummaryKind,
    GMM_COMPONENTS,
};
use crate::error::{Error, Result};
use crate::grid::Ensemble;

/// Linear interpolation between order statistics at position `p * (n - 1)`.
/// `sorted` must be sorted ascending and non-empty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (libm::floor(h) as usize).min(n - 2);
    let t = h - i as f64;
    let (a, b) = (sorted[i], sorted[i + 1]);
    if a == b {
        a
    } else {
        a + t * (b - a)
    }
}

fn min_members(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Mean | ModelKind::Uniform | ModelKind::Quantile => 1,
        ModelKind::Gaussian => 2,
        ModelKind::Gmm => GMM_COMPONENTS,
    }
}

fn mean_of(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

fn unbiased_variance(samples: &[f64], mean: f64) -> f64 {
    let n = samples.len();
    samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Fits one voxel's samples. `quantiles` is only read for the quantile model.
pub fn fit_point(
    kind: ModelKind,
    samples: &[f64],
    quantiles: usize,
    em: &EmConfig,
) -> Result<PointDistribution> {
    let need = min_members(kind);
    if samples.len() < need {
        return Err(Error::Fit(format!(
            "the {} model needs at least {need} members, got {}",
            kind.name(),
            samples.len()
        )));
    }
    Ok(match kind {
        ModelKind::Mean => PointDistribution::Mean(mean_of(samples)),
        ModelKind::Uniform => {
            let (lo, hi) = samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            PointDistribution::Uniform { lo, hi }
        }
        ModelKind::Gaussian => {
            let mean = mean_of(samples);
            PointDistribution::Gaussian { mean, variance: unbiased_variance(samples, mean) }
        }
        ModelKind::Gmm => PointDistribution::Gmm(fit_gmm(samples, em)?.components),
        ModelKind::Quantile => {
            if quantiles == 0 {
                return Err(Error::Argument("quantile count must be at least 1".into()));
            }
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            PointDistribution::Quantile(
                (1..=quantiles)
                    .map(|i| quantile_type7(&sorted, (i as f64 - 0.5) / quantiles as f64))
                    .collect(),
            )
        }
    })
}

fn push_params(p: &PointDistribution, out: &mut Vec<f32>) {
    match p {
        PointDistribution::Mean(m) => out.push(*m as f32),
        PointDistribution::Uniform { lo, hi } => {
            out.push(*lo as f32);
            out.push(*hi as f32);
        }
        PointDistribution::Gaussian { mean, variance } => {
            out.push(*mean as f32);
            out.push(*variance as f32);
        }
        PointDistribution::Gmm(c) => {
            for GaussianComponent { weight, mean, variance } in c {
                out.push(*weight as f32);
                out.push(*mean as f32);
                out.push(*variance as f32);
            }
        }
        PointDistribution::Quantile(q) => out.extend(q.iter().map(|&v| v as f32)),
    }
}

/// Fits `kind` independently at every voxel of the ensemble.
pub fn fit(
    kind: ModelKind,
    ensemble: &Ensemble,
    quantiles: usize,
    em: &EmConfig,
) -> Result<DistributionSummary> {
    let need = min_members(kind);
    if ensemble.len() < need {
        return Err(Error::Fit(format!(
            "the {} model needs at least {need} members, got {}",
            kind.name(),
            ensemble.len()
        )));
    }
    let summary_kind = match kind {
        ModelKind::Mean => SummaryKind::Mean,
        ModelKind::Uniform => SummaryKind::Uniform,
        ModelKind::Gaussian => SummaryKind::Gaussian,
        ModelKind::Gmm => SummaryKind::Gmm,
        ModelKind::Quantile => SummaryKind::Quantile { levels: quantiles },
    };
    let dims = ensemble.dims();
    let mut params = Vec::with_capacity(dims.len() * summary_kind.params_per_voxel());
    let mut samples = Vec::with_capacity(ensemble.len());
    for v in 0..dims.len() {
        ensemble.samples_at(v, &mut samples);
        // canonical order so permuting members cannot change rounding
        samples.sort_by(f64::total_cmp);
        let p = fit_point(kind, &samples, quantiles, em)?;
        push_params(&p, &mut params);
    }
    Ok(DistributionSummary::from_voxel_major(summary_kind, dims, ensemble.spacing(), params))
}

/// Per-voxel lower 25%, central 50% and upper 25% sample ranges, each as a
/// uniform summary: `[min, q25]`, `[q25, q75]`, `[q75, max]`.
pub fn quartile_split(ensemble: &Ensemble) -> Result<[DistributionSummary; 3]> {
    if ensemble.len() < 4 {
        return Err(Error::Fit(format!(
            "the quartile view needs at least 4 members, got {}",
            ensemble.len()
        )));
    }
    let dims = ensemble.dims();
    let n = dims.len();
    let mut out: [Vec<f32>; 3] = [Vec::with_capacity(2 * n), Vec::with_capacity(2 * n), Vec::with_capacity(2 * n)];
    let mut samples = Vec::with_capacity(ensemble.len());
    for v in 0..n {
        ensemble.samples_at(v, &mut samples);
        samples.sort_by(f64::total_cmp);
        let min = samples[0];
        let max = samples[samples.len() - 1];
        let q1 = quantile_type7(&samples, 0.25);
        let q3 = quantile_type7(&samples, 0.75);
        let cuts = [(min, q1), (q1, q3), (q3, max)];
        for (buf, (lo, hi)) in out.iter_mut().zip(cuts) {
            buf.push(lo as f32);
            buf.push(hi as f32);
        }
    }
    let spacing = ensemble.spacing();
    let [a, b, c] = out;
    Ok([
        DistributionSummary::from_voxel_major(SummaryKind::Uniform, dims, spacing, a),
        DistributionSummary::from_voxel_major(SummaryKind::Uniform, dims, spacing, b),
        DistributionSummary::from_voxel_major(SummaryKind::Uniform, dims, spacing, c),
    ])
}
