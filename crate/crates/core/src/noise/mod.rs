//! Per-voxel noise models fitted from ensemble samples.
//!
//! A [`DistributionSummary`] stores a fixed number of `f32` parameters per
//! voxel, so its footprint relative to the mean field is exact:
//!
//! | model    | parameters per voxel               |
//! |----------|------------------------------------|
//! | mean     | 1: mean                            |
//! | uniform  | 2: lo, hi                          |
//! | gaussian | 2: mean, variance                  |
//! | gmm      | 12: (weight, mean, variance) × 4   |
//! | quantile | Q: q_1 … q_Q                       |
//!
//! GMM components are kept sorted by mean, which makes rank-by-rank
//! ("ordered") interpolation a plain blend of the parameter vectors.

mod expect;
mod fit;
mod gmm;
mod sample;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::grid::Dims;

pub use expect::{expected_tf, gaussian_expectation, GAUSSIAN_ABS_TOL, GAUSSIAN_TRUNCATION};
pub use fit::{fit, fit_point, quartile_split, quantile_type7};
pub use gmm::{fit_gmm, log_likelihood, EmConfig, GmmFit};
pub use sample::{sample, sample_into};

pub const GMM_COMPONENTS: usize = 4;
pub const DEFAULT_QUANTILES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub quantiles: usize,
    pub em: EmConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { quantiles: DEFAULT_QUANTILES, em: EmConfig::default() }
    }
}

impl FitOptions {
    pub fn fit(&self, kind: ModelKind, ensemble: &crate::grid::Ensemble) -> Result<DistributionSummary> {
        fit(kind, ensemble, self.quantiles, &self.em)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Mean,
    Uniform,
    Gaussian,
    Gmm,
    Quantile,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Mean, ModelKind::Uniform, ModelKind::Gaussian, ModelKind::Gmm, ModelKind::Quantile];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Uniform => "uniform",
            ModelKind::Gaussian => "gaussian",
            ModelKind::Gmm => "gmm",
            ModelKind::Quantile => "quantile",
        }
    }
}

impl core::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ModelKind::Mean),
            "uniform" => Ok(ModelKind::Uniform),
            "gaussian" => Ok(ModelKind::Gaussian),
            "gmm" => Ok(ModelKind::Gmm),
            "quantile" => Ok(ModelKind::Quantile),
            other => Err(Error::Argument(format!("unknown model '{other}'"))),
        }
    }
}

/// Model plus its shape parameter, enough to interpret a parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SummaryKind {
    Mean,
    Uniform,
    Gaussian,
    Gmm,
    Quantile { levels: usize },
}

impl SummaryKind {
    pub fn model(self) -> ModelKind {
        match self {
            SummaryKind::Mean => ModelKind::Mean,
            SummaryKind::Uniform => ModelKind::Uniform,
            SummaryKind::Gaussian => ModelKind::Gaussian,
            SummaryKind::Gmm => ModelKind::Gmm,
            SummaryKind::Quantile { .. } => ModelKind::Quantile,
        }
    }

    pub fn params_per_voxel(self) -> usize {
        match self {
            SummaryKind::Mean => 1,
            SummaryKind::Uniform | SummaryKind::Gaussian => 2,
            SummaryKind::Gmm => 3 * GMM_COMPONENTS,
            SummaryKind::Quantile { levels } => levels,
        }
    }

    /// Names of the parameter planes, in storage order.
    pub fn plane_names(self) -> Vec<String> {
        match self {
            SummaryKind::Mean => alloc::vec![String::from("mean")],
            SummaryKind::Uniform => alloc::vec![String::from("lo"), String::from("hi")],
            SummaryKind::Gaussian => alloc::vec![String::from("mean"), String::from("variance")],
            SummaryKind::Gmm => (0..GMM_COMPONENTS)
                .flat_map(|k| [format!("weight{k}"), format!("mean{k}"), format!("variance{k}")])
                .collect(),
            SummaryKind::Quantile { levels } => (1..=levels).map(|i| format!("q{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// The distribution at one point of the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum PointDistribution {
    Mean(f64),
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, variance: f64 },
    Gmm([GaussianComponent; GMM_COMPONENTS]),
    /// Values at probability levels `(i - 0.5) / Q`.
    Quantile(SmallVec<[f64; DEFAULT_QUANTILES]>),
}

impl PointDistribution {
    /// Location used by the mean model and by TF presets.
    pub fn mean(&self) -> f64 {
        match self {
            PointDistribution::Mean(m) => *m,
            PointDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            PointDistribution::Gaussian { mean, .. } => *mean,
            PointDistribution::Gmm(c) => {
                let w: f64 = c.iter().map(|c| c.weight).sum();
                c.iter().map(|c| c.weight * c.mean).sum::<f64>() / w
            }
            PointDistribution::Quantile(q) => q.iter().sum::<f64>() / q.len() as f64,
        }
    }

    /// `Some(v)` when all probability mass sits at `v`.
    pub fn degenerate_value(&self) -> Option<f64> {
        match self {
            PointDistribution::Mean(m) => Some(*m),
            PointDistribution::Uniform { lo, hi } => (lo == hi).then_some(*lo),
            PointDistribution::Gaussian { mean, variance } => (*variance <= 0.0).then_some(*mean),
            PointDistribution::Gmm(c) => {
                let m = c[0].mean;
                c.iter().all(|c| c.variance <= 0.0 && c.mean == m).then_some(m)
            }
            PointDistribution::Quantile(q) => (q[0] == q[q.len() - 1]).then_some(q[0]),
        }
    }
}

/// Per-voxel parameters of one noise model over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSummary {
    kind: SummaryKind,
    dims: Dims,
    spacing: [f64; 3],
    /// Voxel-major: parameters of voxel `v` are `params[v * P..(v + 1) * P]`.
    params: Vec<f32>,
}

impl DistributionSummary {
    pub(crate) fn from_voxel_major(
        kind: SummaryKind,
        dims: Dims,
        spacing: [f64; 3],
        params: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(params.len(), dims.len() * kind.params_per_voxel());
        Self { kind, dims, spacing, params }
    }

    /// Rebuilds a summary from parameter planes, validating every voxel.
    pub fn from_planes(
        kind: SummaryKind,
        dims: Dims,
        spacing: [f64; 3],
        planes: &[Vec<f32>],
    ) -> Result<Self> {
        let p = kind.params_per_voxel();
        if p == 0 {
            return Err(Error::Argument(String::from("summary needs at least one parameter")));
        }
        if planes.len() != p {
            return Err(Error::Dimension(format!("expected {p} planes, got {}", planes.len())));
        }
        let n = dims.len();
        if let Some(i) = planes.iter().position(|pl| pl.len() != n) {
            return Err(Error::Dimension(format!("plane {i} has wrong length")));
        }
        let mut params = Vec::with_capacity(n * p);
        for v in 0..n {
            params.extend(planes.iter().map(|pl| pl[v]));
        }
        let s = Self { kind, dims, spacing, params };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if let Some(index) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        for v in 0..self.dims.len() {
            let q = self.voxel_params(v);
            let ok = match self.kind {
                SummaryKind::Mean => true,
                SummaryKind::Uniform => q[0] <= q[1],
                SummaryKind::Gaussian => q[1] >= 0.0,
                SummaryKind::Gmm => {
                    let w: f64 = q.chunks(3).map(|c| c[0] as f64).sum();
                    q.chunks(3).all(|c| c[0] >= 0.0 && c[2] >= 0.0) && (w - 1.0).abs() < 1e-5
                }
                SummaryKind::Quantile { .. } => q.windows(2).all(|w| w[0] <= w[1]),
            };
            if !ok {
                return Err(Error::Data(format!(
                    "voxel {v} violates the {} parameter invariants",
                    self.kind.model().name()
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> SummaryKind {
        self.kind
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn params_per_voxel(&self) -> usize {
        self.kind.params_per_voxel()
    }

    /// Number of stored scalars, i.e. the serialized payload in `f32`s.
    pub fn payload_scalars(&self) -> usize {
        self.params.len()
    }

    pub fn voxel_params(&self, voxel: usize) -> &[f32] {
        let p = self.params_per_voxel();
        &self.params[voxel * p..(voxel + 1) * p]
    }

    pub fn plane(&self, index: usize) -> Vec<f32> {
        let p = self.params_per_voxel();
        self.params.iter().skip(index).step_by(p).copied().collect()
    }

    pub fn planes(&self) -> Vec<Vec<f32>> {
        (0..self.params_per_voxel()).map(|i| self.plane(i)).collect()
    }

    pub fn voxel(&self, voxel: usize) -> PointDistribution {
        let q = self.voxel_params(voxel);
        let mut buf: SmallVec<[f64; 16]> = SmallVec::with_capacity(q.len());
        buf.extend(q.iter().map(|&v| v as f64));
        self.point_from(&buf)
    }

    fn point_from(&self, q: &[f64]) -> PointDistribution {
        match self.kind {
            SummaryKind::Mean => PointDistribution::Mean(q[0]),
            SummaryKind::Uniform => PointDistribution::Uniform { lo: q[0], hi: q[1] },
            SummaryKind::Gaussian => PointDistribution::Gaussian { mean: q[0], variance: q[1] },
            SummaryKind::Gmm => {
                let mut c = [GaussianComponent { weight: 0.0, mean: 0.0, variance: 0.0 }; GMM_COMPONENTS];
                for (k, slot) in c.iter_mut().enumerate() {
                    *slot = GaussianComponent {
                        weight: q[3 * k],
                        mean: q[3 * k + 1],
                        variance: q[3 * k + 2],
                    };
                }
                PointDistribution::Gmm(c)
            }
            SummaryKind::Quantile { .. } => PointDistribution::Quantile(SmallVec::from_slice(q)),
        }
    }

    /// Whether a continuous voxel-space position lies inside `[0, n - 1]³`.
    pub fn contains(&self, pos: [f64; 3]) -> bool {
        let d = [self.dims.nx, self.dims.ny, self.dims.nz];
        (0..3).all(|a| pos[a] >= -BOUNDS_EPS && pos[a] <= (d[a] - 1) as f64 + BOUNDS_EPS)
    }

    /// Trilinear (bilinear for 2D) blend of the parameters of the
    /// surrounding voxels. Positions are in voxel units; voxel centers sit at
    /// integer coordinates.
    pub fn interpolate(&self, pos: [f64; 3]) -> Result<PointDistribution> {
        if !self.contains(pos) || pos.iter().any(|c| !c.is_finite()) {
            return Err(Error::Sampling { position: pos });
        }
        let p = self.params_per_voxel();
        let mut acc: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, p);
        self.blend_into(pos, &mut acc);
        Ok(self.point_from(&acc))
    }

    fn blend_into(&self, pos: [f64; 3], acc: &mut [f64]) {
        let d = [self.dims.nx, self.dims.ny, self.dims.nz];
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            if d[a] == 1 {
                continue;
            }
            let c = pos[a].clamp(0.0, (d[a] - 1) as f64);
            let i = (libm::floor(c) as usize).min(d[a] - 2);
            base[a] = i;
            frac[a] = c - i as f64;
        }
        let p = self.params_per_voxel();
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut skip = false;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                if bit == 1 && d[a] == 1 {
                    skip = true;
                    break;
                }
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx[a] = base[a] + bit;
            }
            if skip || w == 0.0 {
                continue;
            }
            let v = self.dims.index(idx[0], idx[1], idx[2]);
            let q = &self.params[v * p..(v + 1) * p];
            for (slot, &x) in acc.iter_mut().zip(q) {
                *slot += w * x as f64;
            }
        }
    }

    /// Smallest and largest location parameter over the grid.
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in 0..self.dims.len() {
            let q = self.voxel_params(v);
            let (a, b) = match self.kind {
                SummaryKind::Gmm => q
                    .chunks(3)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                        (a.min(c[1] as f64), b.max(c[1] as f64))
                    }),
                SummaryKind::Gaussian => (q[0] as f64, q[0] as f64),
                _ => (q[0] as f64, q[q.len() - 1] as f64),
            };
            lo = lo.min(a);
            hi = hi.max(b);
        }
        (lo, hi)
    }
}

pub(crate) const BOUNDS_EPS: f64 = 1e-9;
