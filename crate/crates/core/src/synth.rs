//! Seeded synthetic eddy ensembles: superpositions of isotropic Gaussian
//! bumps laid out on a jittered lattice, perturbed per member.
//!
//! Member `i` draws its perturbations from its own random stream, so a
//! member does not depend on how many members are generated.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Dims, Ensemble, ScalarGrid};
use crate::rng::stream_rng;

/// Bump width as a fraction of the lattice cell.
const SIGMA_FRACTION: f64 = 0.2;
/// Fraction of a cell the base layout may shift a bump by.
const LAYOUT_JITTER: f64 = 0.12;
/// Radius of the drift orbit in cells.
const DRIFT_RADIUS: f64 = 0.25;
/// Per-member amplitude factors never fall below this.
const MIN_AMPLITUDE_FACTOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub members: usize,
    pub dims: Dims,
    pub vortices: usize,
    /// Per-member perturbation scale: center offsets are `jitter` cells
    /// and amplitude factors `1 ± jitter` (one standard deviation).
    pub jitter: f64,
    pub time: u32,
    /// Speed of bump centers in pixels per time step. Each bump circles
    /// its layout position with a radius of a quarter cell, so drifting
    /// eddies stay inside the domain for any time index.
    pub drift: f64,
    pub field: alloc::string::String,
}

impl SynthParams {
    pub fn new(seed: u64, members: usize, dims: Dims, vortices: usize, jitter: f64) -> Self {
        Self { seed, members, dims, vortices, jitter, time: 0, drift: 0.0, field: "speed".into() }
    }

    pub fn at_time(mut self, time: u32, drift: f64) -> Self {
        self.time = time;
        self.drift = drift;
        self
    }
}

/// A bump as placed in one member; `center` is `[x, y]` in voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SynthEnsemble {
    pub ensemble: Ensemble,
    /// `bumps[member][bump]`; bump ids are shared across members.
    pub bumps: Vec<Vec<Bump>>,
}

/// Layout shared by every member before per-member perturbation.
pub fn base_layout(p: &SynthParams) -> Vec<Bump> {
    let cols = libm::ceil(libm::sqrt(p.vortices as f64)) as usize;
    let rows = p.vortices.div_ceil(cols);
    let cw = p.dims.nx as f64 / cols as f64;
    let ch = p.dims.ny as f64 / rows as f64;
    let cell = cw.min(ch);
    let mut rng = stream_rng(p.seed, 0);
    let mut heading = stream_rng(p.seed, u64::MAX);
    (0..p.vortices)
        .map(|b| {
            let (c, r) = (b % cols, b / cols);
            let jx: f64 = rng.random_range(-1.0..1.0);
            let jy: f64 = rng.random_range(-1.0..1.0);
            let amplitude = rng.random_range(0.6..1.0);
            let theta = heading.random_range(0.0..core::f64::consts::TAU);
            let radius = DRIFT_RADIUS * cell;
            let phi = theta + p.drift * p.time as f64 / radius;
            Bump {
                center: [
                    (c as f64 + 0.5 + LAYOUT_JITTER * jx) * cw + radius * (libm::cos(phi) - libm::cos(theta)),
                    (r as f64 + 0.5 + LAYOUT_JITTER * jy) * ch + radius * (libm::sin(phi) - libm::sin(theta)),
                ],
                amplitude,
                sigma: SIGMA_FRACTION * cell,
            }
        })
        .collect()
}

pub fn synth_eddy_ensemble(p: &SynthParams) -> Result<SynthEnsemble> {
    if p.members == 0 {
        return Err(Error::Argument("at least one member is required".into()));
    }
    if p.vortices == 0 {
        return Err(Error::Argument("at least one vortex is required".into()));
    }
    if !(p.jitter >= 0.0 && p.jitter.is_finite()) || !p.drift.is_finite() {
        return Err(Error::Argument(format!("jitter {} and drift {} must be finite, jitter ≥ 0", p.jitter, p.drift)));
    }
    let dims = Dims::new(p.dims.nx, p.dims.ny, p.dims.nz)?;
    let base = base_layout(p);
    let cell = base[0].sigma / SIGMA_FRACTION;

    let mut grids = Vec::with_capacity(p.members);
    let mut bumps = Vec::with_capacity(p.members);
    for m in 0..p.members {
        let mut rng = stream_rng(p.seed, m as u64 + 1);
        let placed: Vec<Bump> = base
            .iter()
            .map(|b| {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                let da: f64 = rng.sample(StandardNormal);
                Bump {
                    center: [b.center[0] + p.jitter * cell * dx, b.center[1] + p.jitter * cell * dy],
                    amplitude: b.amplitude * (1.0 + p.jitter * da).max(MIN_AMPLITUDE_FACTOR),
                    sigma: b.sigma,
                }
            })
            .collect();
        let grid = render_bumps(dims, &placed)?.with_meta(&p.field, p.time, m as u32);
        grids.push(grid);
        bumps.push(placed);
    }
    Ok(SynthEnsemble { ensemble: Ensemble::new(grids)?, bumps })
}

/// Bump field with a linear falloff in depth.
pub fn render_bumps(dims: Dims, bumps: &[Bump]) -> Result<ScalarGrid> {
    let mut plane = alloc::vec![0.0f64; dims.nx * dims.ny];
    for y in 0..dims.ny {
        for x in 0..dims.nx {
            let mut v = 0.0;
            for b in bumps {
                let dx = x as f64 - b.center[0];
                let dy = y as f64 - b.center[1];
                v += b.amplitude * libm::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            plane[x + y * dims.nx] = v;
        }
    }
    ScalarGrid::from_fn(dims, |x, y, z| {
        let depth = 1.0 - 0.4 * z as f64 / dims.nz as f64;
        (plane[x + y * dims.nx] * depth) as f32
    })
}

/// Scales one member's values by `factor`, leaving the others untouched.
pub fn inject_outlier(ensemble: &Ensemble, member: usize, factor: f64) -> Result<Ensemble> {
    if member >= ensemble.len() {
        return Err(Error::Index(format!("member {member} of {}", ensemble.len())));
    }
    let grids = ensemble
        .members()
        .iter()
        .enumerate()
        .map(|(i, g)| if i == member { g.map(|v| (v as f64 * factor) as f32) } else { Ok(g.clone()) })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(grids)
}
