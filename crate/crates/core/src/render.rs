//! Emission-absorption raycasting of distribution summaries.
//!
//! Classification happens per sample in expectation (`E[TF(X)]` under the
//! interpolated point distribution) or by Monte Carlo draws; compositing is
//! front-to-back with opacity correction relative to a one-voxel step.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Ensemble;
use crate::image::Image;
use crate::noise::{self, expected_tf, DistributionSummary, FitOptions, ModelKind, PointDistribution};
use crate::rng::stream_rng;
use crate::tf::{Rgba, TransferFunction};

type Vec3 = [f64; 3];

#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn norm(a: Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Pinhole camera. Positions are in world units (voxel index × spacing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Looks at the volume center from `(azimuth, elevation)` degrees at
    /// `distance` times the bounding-box diagonal.
    pub fn orbit(
        summary: &DistributionSummary,
        azimuth_deg: f64,
        elevation_deg: f64,
        distance: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let ext = extent(summary);
        let center = scale(ext, 0.5);
        let diag = norm(ext).max(1.0);
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let dir = [libm::cos(el) * libm::cos(az), libm::cos(el) * libm::sin(az), libm::sin(el)];
        Self {
            eye: add(center, scale(dir, distance * diag)),
            look_at: center,
            up: [0.0, 0.0, 1.0],
            fov_y_deg: 40.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fwd = sub(self.look_at, self.eye);
        if norm(fwd) == 0.0 || !norm(fwd).is_finite() {
            return Err(Error::Camera(String::from("eye and look_at coincide")));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::Camera(format!("fov {} outside (0, 180)", self.fov_y_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera(String::from("image size must be positive")));
        }
        if norm(cross(fwd, self.up)) <= 1e-12 * norm(fwd) * norm(self.up) {
            return Err(Error::Camera(String::from("up vector is parallel to the view direction")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Sampling distance in voxel units.
    pub step: f64,
    /// Rays stop once accumulated opacity reaches this value.
    pub termination_alpha: f64,
    pub background: [f64; 4],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { step: 0.5, termination_alpha: 0.99, background: [1.0, 1.0, 1.0, 1.0] }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Argument(format!("step {} must be positive", self.step)));
        }
        if !(self.termination_alpha > 0.0 && self.termination_alpha <= 1.0) {
            return Err(Error::Argument(format!(
                "termination alpha {} outside (0, 1]",
                self.termination_alpha
            )));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Argument(String::from("background channels must be in [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Expected,
    /// Each step averages the classification of `samples` draws.
    MonteCarlo { seed: u64, samples: usize },
}

fn extent(summary: &DistributionSummary) -> Vec3 {
    let d = summary.dims();
    let s = summary.spacing();
    [
        (d.nx - 1) as f64 * s[0],
        (d.ny - 1) as f64 * s[1],
        (d.nz - 1) as f64 * s[2],
    ]
}

/// Slab test against `[0, ext]`; returns the parametric entry/exit.
fn intersect_box(origin: Vec3, dir: Vec3, ext: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < 0.0 || origin[a] > ext[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut lo, mut hi) = ((0.0 - origin[a]) * inv, (ext[a] - origin[a]) * inv);
        if lo > hi {
            core::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    let t0 = t0.max(0.0);
    (t1 > t0).then_some((t0, t1))
}

#[inline]
pub fn quantize(c: f64) -> u8 {
    libm::round(c.clamp(0.0, 1.0) * 255.0) as u8
}

/// Per-sample opacity corrected for a step of `step` reference units.
#[inline]
pub fn correct_opacity(alpha: f64, step: f64) -> f64 {
    if alpha >= 1.0 {
        1.0
    } else {
        1.0 - libm::pow(1.0 - alpha, step)
    }
}

/// Front-to-back accumulator for one ray.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compositor {
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Compositor {
    #[inline]
    pub fn add(&mut self, rgba: Rgba, step: f64) {
        let a = correct_opacity(rgba[3], step);
        let w = (1.0 - self.alpha) * a;
        for c in 0..3 {
            self.color[c] += w * rgba[c];
        }
        self.alpha += w;
    }

    pub fn finish(&self, background: [f64; 4]) -> [u8; 4] {
        let rest = 1.0 - self.alpha;
        let mut out = [0u8; 4];
        for c in 0..3 {
            out[c] = quantize(self.color[c] + rest * background[3] * background[c]);
        }
        out[3] = quantize(self.alpha + rest * background[3]);
        out
    }
}

/// A validated render setup; pixels are independent and can be computed
/// in any order or in parallel.
pub struct Renderer<'a> {
    summary: &'a DistributionSummary,
    tf: &'a TransferFunction,
    camera: Camera,
    config: RenderConfig,
    mode: RenderMode,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    half_h: f64,
    ext: Vec3,
    world_step: f64,
}

impl<'a> Renderer<'a> {
    pub fn new(
        summary: &'a DistributionSummary,
        tf: &'a TransferFunction,
        camera: Camera,
        config: RenderConfig,
        mode: RenderMode,
    ) -> Result<Self> {
        camera.validate()?;
        config.validate()?;
        if let RenderMode::MonteCarlo { samples: 0, .. } = mode {
            return Err(Error::Argument(String::from("Monte Carlo mode needs at least one sample")));
        }
        let f = sub(camera.look_at, camera.eye);
        let forward = scale(f, 1.0 / norm(f));
        let r = cross(forward, camera.up);
        let right = scale(r, 1.0 / norm(r));
        let up = cross(right, forward);
        let half_h = libm::tan(0.5 * camera.fov_y_deg.to_radians());
        let spacing = summary.spacing();
        let min_spacing = spacing[0].min(spacing[1]).min(spacing[2]);
        Ok(Self {
            summary,
            tf,
            camera,
            config,
            mode,
            forward,
            right,
            up,
            half_h,
            ext: extent(summary),
            world_step: config.step * min_spacing,
        })
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    /// Unit direction of the ray through the center of pixel `(px, py)`;
    /// row 0 is the top of the image.
    pub fn ray_direction(&self, px: usize, py: usize) -> Vec3 {
        let (w, h) = (self.camera.width as f64, self.camera.height as f64);
        let aspect = w / h;
        let x = (2.0 * (px as f64 + 0.5) / w - 1.0) * aspect * self.half_h;
        let y = (1.0 - 2.0 * (py as f64 + 0.5) / h) * self.half_h;
        let d = add(self.forward, add(scale(self.right, x), scale(self.up, y)));
        scale(d, 1.0 / norm(d))
    }

    /// Sample points along the ray of a pixel, in world coordinates.
    pub fn ray_samples(&self, px: usize, py: usize) -> Vec<Vec3> {
        let dir = self.ray_direction(px, py);
        let mut out = Vec::new();
        if let Some((t0, t1)) = intersect_box(self.camera.eye, dir, self.ext) {
            let mut k = 0usize;
            loop {
                let t = t0 + (k as f64 + 0.5) * self.world_step;
                if t >= t1 {
                    break;
                }
                out.push(add(self.camera.eye, scale(dir, t)));
                k += 1;
            }
        }
        out
    }

    fn to_voxel(&self, p: Vec3) -> Vec3 {
        let s = self.summary.spacing();
        let d = self.summary.dims();
        let n = [d.nx, d.ny, d.nz];
        let mut v = [0.0; 3];
        for a in 0..3 {
            v[a] = (p[a] / s[a]).clamp(0.0, (n[a] - 1) as f64);
        }
        v
    }

    pub fn pixel(&self, px: usize, py: usize) -> [u8; 4] {
        let dir = self.ray_direction(px, py);
        let mut acc = Compositor::default();
        let Some((t0, t1)) = intersect_box(self.camera.eye, dir, self.ext) else {
            return acc.finish(self.config.background);
        };
        let mut rng = match self.mode {
            RenderMode::MonteCarlo { seed, .. } => {
                Some(stream_rng(seed, (py * self.camera.width + px) as u64))
            }
            RenderMode::Expected => None,
        };
        let mut draws = Vec::new();
        let mut k = 0usize;
        loop {
            let t = t0 + (k as f64 + 0.5) * self.world_step;
            if t >= t1 {
                break;
            }
            k += 1;
            let pos = self.to_voxel(add(self.camera.eye, scale(dir, t)));
            let point = match self.summary.interpolate(pos) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let rgba = match (&self.mode, rng.as_mut()) {
                (RenderMode::MonteCarlo { samples, .. }, Some(r)) => {
                    self.classify_mc(&point, *samples, r, &mut draws)
                }
                _ => expected_tf(&point, self.tf),
            };
            acc.add(rgba, self.config.step);
            if acc.alpha >= self.config.termination_alpha {
                break;
            }
        }
        acc.finish(self.config.background)
    }

    fn classify_mc(
        &self,
        point: &PointDistribution,
        n: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
        draws: &mut Vec<f64>,
    ) -> Rgba {
        draws.clear();
        noise::sample_into(point, rng, n, draws);
        let mut acc = [0.0; 4];
        for &x in draws.iter() {
            let c = self.tf.eval(x);
            for ch in 0..4 {
                acc[ch] += c[ch];
            }
        }
        acc.map(|v| v / n as f64)
    }

    /// Renders rows `rows` into a tightly packed RGBA buffer.
    pub fn render_rows(&self, rows: core::ops::Range<usize>, out: &mut [u8]) {
        let w = self.camera.width;
        for (j, py) in rows.enumerate() {
            for px in 0..w {
                let p = self.pixel(px, py);
                let i = 4 * (j * w + px);
                out[i..i + 4].copy_from_slice(&p);
            }
        }
    }

    pub fn render(&self) -> Image {
        let (w, h) = (self.camera.width, self.camera.height);
        let mut buf = alloc::vec![0u8; 4 * w * h];
        self.render_rows(0..h, &mut buf);
        Image::new(w, h, buf).expect("buffer sized for the camera")
    }
}

pub fn render(
    summary: &DistributionSummary,
    tf: &TransferFunction,
    camera: &Camera,
    config: &RenderConfig,
    mode: RenderMode,
) -> Result<Image> {
    Ok(Renderer::new(summary, tf, *camera, *config, mode)?.render())
}

/// Lower-quartile, interquartile and upper-quartile renders, each as a
/// uniform model with the same TF and camera.
pub fn render_quartile_view(
    ensemble: &Ensemble,
    tf: &TransferFunction,
    camera: &Camera,
    config: &RenderConfig,
) -> Result<[Image; 3]> {
    let [lower, middle, upper] = noise::quartile_split(ensemble)?;
    Ok([
        render(&lower, tf, camera, config, RenderMode::Expected)?,
        render(&middle, tf, camera, config, RenderMode::Expected)?,
        render(&upper, tf, camera, config, RenderMode::Expected)?,
    ])
}

/// Fits and renders each requested time step.
#[allow(clippy::too_many_arguments)]
pub fn render_time_series(
    steps: &BTreeMap<u32, Ensemble>,
    times: &[u32],
    model: ModelKind,
    fit: &FitOptions,
    tf: &TransferFunction,
    camera: &Camera,
    config: &RenderConfig,
) -> Result<Vec<(u32, Image)>> {
    if let Some(t) = times.iter().find(|t| !steps.contains_key(t)) {
        return Err(Error::Data(format!("time step {t} has no ensemble")));
    }
    times
        .iter()
        .map(|&t| {
            let summary = fit.fit(model, &steps[&t])?;
            Ok((t, render(&summary, tf, camera, config, RenderMode::Expected)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use crate::noise::SummaryKind;
    use crate::tf::ControlPoint;
    use alloc::vec;

    fn cube(value: f32) -> DistributionSummary {
        let d = Dims::new(4, 4, 4).unwrap();
        DistributionSummary::from_planes(SummaryKind::Mean, d, [1.0; 3], &[vec![value; 64]]).unwrap()
    }

    fn cam(w: usize) -> Camera {
        Camera { eye: [1.5, 1.5, 12.0], look_at: [1.5, 1.5, 1.5], up: [0.0, 1.0, 0.0], fov_y_deg: 30.0, width: w, height: w }
    }

    #[test]
    fn transparent_tf_shows_background() {
        let tf = TransferFunction::constant([0.9, 0.2, 0.1, 0.0]).unwrap();
        let cfg = RenderConfig { background: [0.2, 0.4, 0.6, 1.0], ..Default::default() };
        let img = render(&cube(0.5), &tf, &cam(8), &cfg, RenderMode::Expected).unwrap();
        assert!(img.pixels().chunks(4).all(|p| p == [51, 102, 153, 255]));
    }

    #[test]
    fn opaque_first_sample_wins() {
        let tf = TransferFunction::new(vec![
            ControlPoint::new(0.0, 0.25, 0.5, 0.75, 1.0),
            ControlPoint::new(1.0, 0.25, 0.5, 0.75, 1.0),
        ])
        .unwrap();
        let img = render(&cube(0.5), &tf, &cam(4), &RenderConfig::default(), RenderMode::Expected).unwrap();
        // the central ray hits the cube
        assert_eq!(img.pixel(2, 2), [quantize(0.25), quantize(0.5), quantize(0.75), 255]);
    }

    #[test]
    fn degenerate_camera_is_rejected() {
        let tf = TransferFunction::constant([0.0; 4]).unwrap();
        let mut c = cam(4);
        c.eye = c.look_at;
        assert!(matches!(
            render(&cube(0.0), &tf, &c, &RenderConfig::default(), RenderMode::Expected),
            Err(Error::Camera(_))
        ));
        let mut c = cam(4);
        c.fov_y_deg = 180.0;
        assert!(c.validate().is_err());
        let mut c = cam(4);
        c.up = [0.0, 0.0, 1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn opacity_correction_composes() {
        // two half steps equal one full step
        let a = 0.3;
        let half = correct_opacity(a, 0.5);
        let two = 1.0 - (1.0 - half) * (1.0 - half);
        assert!((two - a).abs() < 1e-15);
    }

    #[test]
    fn box_miss_and_hit() {
        assert!(intersect_box([5.0, 5.0, 5.0], [1.0, 0.0, 0.0], [1.0, 1.0, 1.0]).is_none());
        let (t0, t1) = intersect_box([-1.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert!((t0 - 1.0).abs() < 1e-15 && (t1 - 2.0).abs() < 1e-15);
    }
}
