//! Raycaster checks: an independent per-ray compositing oracle plus
//! convergence and symmetry properties on synthetic ensembles.

use std::collections::BTreeMap;

use eddyscope_core::grid::{Dims, Ensemble, ScalarGrid};
use eddyscope_core::image::image_diff;
use eddyscope_core::noise::{FitOptions, ModelKind};
use eddyscope_core::render::*;
use eddyscope_core::synth::{inject_outlier, synth_eddy_ensemble, SynthParams};
use eddyscope_core::tf::{ControlPoint, TransferFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type V3 = [f64; 3];

fn tf_at(points: &[(f64, [f64; 4])], x: f64) -> [f64; 4] {
    if x <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        if x <= w[1].0 {
            let t = (x - w[0].0) / (w[1].0 - w[0].0);
            return std::array::from_fn(|k| w[0].1[k] + t * (w[1].1[k] - w[0].1[k]));
        }
    }
    points[points.len() - 1].1
}

/// Mean of the TF over `[lo, hi]` by composite Simpson on a fine grid
/// refined at every breakpoint.
fn mean_over(points: &[(f64, [f64; 4])], lo: f64, hi: f64) -> [f64; 4] {
    if hi - lo < 1e-12 {
        return tf_at(points, lo);
    }
    let mut cuts = vec![lo];
    cuts.extend(points.iter().map(|p| p.0).filter(|&s| s > lo && s < hi));
    cuts.push(hi);
    let mut acc = [0.0; 4];
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (tf_at(points, a), tf_at(points, m), tf_at(points, b));
        for k in 0..4 {
            acc[k] += (b - a) / 6.0 * (fa[k] + 4.0 * fm[k] + fb[k]);
        }
    }
    acc.map(|v| v / (hi - lo))
}

fn norm(a: V3) -> V3 {
    let l = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / l, a[1] / l, a[2] / l]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

struct Oracle {
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    tf: Vec<(f64, [f64; 4])>,
}

impl Oracle {
    fn lerp3(&self, field: &[f64], p: V3) -> f64 {
        let n = self.n;
        let c = p.map(|v| v.clamp(0.0, (n - 1) as f64));
        let i = c.map(|v| (v.floor() as usize).min(n - 2));
        let f = [c[0] - i[0] as f64, c[1] - i[1] as f64, c[2] - i[2] as f64];
        let at = |x: usize, y: usize, z: usize| field[x + n * (y + n * z)];
        let mut v = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                        * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                        * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                    v += w * at(i[0] + dx, i[1] + dy, i[2] + dz);
                }
            }
        }
        v
    }

    fn pixel(&self, cam: &Camera, step: f64, px: usize, py: usize) -> [f64; 4] {
        let fwd = norm([cam.look_at[0] - cam.eye[0], cam.look_at[1] - cam.eye[1], cam.look_at[2] - cam.eye[2]]);
        let right = norm(cross(fwd, cam.up));
        let up = cross(right, fwd);
        let th = (cam.fov_y_deg.to_radians() / 2.0).tan();
        let aspect = cam.width as f64 / cam.height as f64;
        let sx = ((px as f64 + 0.5) / cam.width as f64 * 2.0 - 1.0) * th * aspect;
        let sy = (1.0 - (py as f64 + 0.5) / cam.height as f64 * 2.0) * th;
        let dir = norm(std::array::from_fn(|k| fwd[k] + sx * right[k] + sy * up[k]));
        let ext = (self.n - 1) as f64;
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if dir[k].abs() < 1e-300 {
                continue;
            }
            let a = (0.0 - cam.eye[k]) / dir[k];
            let b = (ext - cam.eye[k]) / dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        let (mut color, mut alpha) = ([0.0; 3], 0.0);
        let mut t = t0 + 0.5 * step;
        while t < t1 {
            let p: V3 = std::array::from_fn(|k| cam.eye[k] + t * dir[k]);
            let c = mean_over(&self.tf, self.lerp3(&self.lo, p), self.lerp3(&self.hi, p));
            let a = 1.0 - (1.0 - c[3]).powf(step);
            for k in 0..3 {
                color[k] += (1.0 - alpha) * a * c[k];
            }
            alpha += (1.0 - alpha) * a;
            t += step;
        }
        // white, opaque background
        [color[0] + 1.0 - alpha, color[1] + 1.0 - alpha, color[2] + 1.0 - alpha, 1.0]
    }
}

fn random_ensemble(n: usize, members: usize, seed: u64) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(n, n, n).unwrap();
    let grids = (0..members)
        .map(|m| {
            let v: Vec<f32> = (0..dims.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            ScalarGrid::new(dims, v).unwrap().with_meta("f", 0, m as u32)
        })
        .collect();
    Ensemble::new(grids).unwrap()
}

#[test]
fn uniform_render_matches_per_ray_oracle() {
    let e = random_ensemble(8, 5, 21);
    let summary = FitOptions::default().fit(ModelKind::Uniform, &e).unwrap();
    let pts = vec![
        (0.1, [0.9, 0.9, 0.1, 0.0]),
        (0.45, [0.1, 0.3, 0.9, 0.2]),
        (0.7, [0.8, 0.1, 0.1, 0.5]),
        (0.95, [1.0, 0.0, 0.0, 0.9]),
    ];
    let tf =
        TransferFunction::new(pts.iter().map(|(s, c)| ControlPoint::new(*s, c[0], c[1], c[2], c[3])).collect()).unwrap();
    let mut lo = vec![f64::INFINITY; 512];
    let mut hi = vec![f64::NEG_INFINITY; 512];
    for g in e.members() {
        for (i, &v) in g.values().iter().enumerate() {
            lo[i] = lo[i].min(v as f64);
            hi[i] = hi[i].max(v as f64);
        }
    }
    let oracle = Oracle { n: 8, lo, hi, tf: pts };
    let cam = Camera { eye: [14.0, 11.0, 9.0], look_at: [3.5, 3.5, 3.5], up: [0.0, 0.0, 1.0], fov_y_deg: 45.0, width: 32, height: 32 };
    let cfg = RenderConfig { step: 0.5, termination_alpha: 1.0, background: [1.0; 4] };
    let img = render(&summary, &tf, &cam, &cfg, RenderMode::Expected).unwrap();
    let mut worst = 0.0f64;
    for py in 0..32 {
        for px in 0..32 {
            let want = oracle.pixel(&cam, 0.5, px, py);
            let got = img.pixel(px, py);
            for k in 0..4 {
                worst = worst.max((got[k] as f64 - 255.0 * want[k].clamp(0.0, 1.0)).abs());
            }
        }
    }
    assert!(worst <= 1.0, "worst channel error {worst}/255");
}

fn synth_volume(jitter: f64) -> Ensemble {
    let p = SynthParams::new(77, 8, Dims::new(32, 32, 32).unwrap(), 5, jitter);
    synth_eddy_ensemble(&p).unwrap().ensemble
}

fn preset_for(e: &Ensemble) -> TransferFunction {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for g in e.members() {
        let (a, b) = g.min_max();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    TransferFunction::preset_eddy(lo as f64, hi as f64)
}

#[test]
fn halving_the_step_converges() {
    let e = synth_volume(0.1);
    let tf = preset_for(&e);
    let s = FitOptions::default().fit(ModelKind::Gaussian, &e).unwrap();
    let cam = Camera::orbit(&s, 35.0, 30.0, 1.6, 48, 48);
    let coarse = RenderConfig::default();
    let fine = RenderConfig { step: coarse.step / 2.0, ..coarse };
    let a = render(&s, &tf, &cam, &coarse, RenderMode::Expected).unwrap();
    let b = render(&s, &tf, &cam, &fine, RenderMode::Expected).unwrap();
    let d = image_diff(&a, &b).unwrap();
    assert!(d.mean_abs < 2.0, "mean diff {}", d.mean_abs);
}

#[test]
fn member_order_does_not_matter() {
    let e = synth_volume(0.2);
    let tf = preset_for(&e);
    let mut rev: Vec<ScalarGrid> = e.members().to_vec();
    rev.reverse();
    let r = Ensemble::new(rev).unwrap();
    for kind in ModelKind::ALL {
        let a = FitOptions::default().fit(kind, &e).unwrap();
        let b = FitOptions::default().fit(kind, &r).unwrap();
        assert_eq!(a, b, "{kind:?}");
        let cam = Camera::orbit(&a, 10.0, 20.0, 1.8, 24, 24);
        let ia = render(&a, &tf, &cam, &RenderConfig::default(), RenderMode::Expected).unwrap();
        let ib = render(&b, &tf, &cam, &RenderConfig::default(), RenderMode::Expected).unwrap();
        assert_eq!(ia, ib);
    }
}

#[test]
fn monte_carlo_approaches_expectation() {
    let e = synth_volume(0.3);
    let tf = preset_for(&e);
    let s = FitOptions::default().fit(ModelKind::Gmm, &e).unwrap();
    let cam = Camera::orbit(&s, 35.0, 30.0, 1.6, 32, 32);
    let cfg = RenderConfig::default();
    let expected = render(&s, &tf, &cam, &cfg, RenderMode::Expected).unwrap();
    let diffs: Vec<f64> = [1, 16, 256]
        .iter()
        .map(|&n| {
            let mc = render(&s, &tf, &cam, &cfg, RenderMode::MonteCarlo { seed: 5, samples: n }).unwrap();
            image_diff(&mc, &expected).unwrap().mean_abs
        })
        .collect();
    assert!(diffs[0] >= diffs[1] && diffs[1] >= diffs[2], "{diffs:?}");
    let again = render(&s, &tf, &cam, &cfg, RenderMode::MonteCarlo { seed: 5, samples: 16 }).unwrap();
    let once = render(&s, &tf, &cam, &cfg, RenderMode::MonteCarlo { seed: 5, samples: 16 }).unwrap();
    assert_eq!(again, once);
}

#[test]
fn quartile_view_shows_the_outlier() {
    let e = synth_volume(0.1);
    let tf = preset_for(&e);
    let constant = Ensemble::new(vec![e.members()[0].clone(); 4]).unwrap();
    let cam = Camera::orbit(&FitOptions::default().fit(ModelKind::Mean, &e).unwrap(), 35.0, 30.0, 1.6, 32, 32);
    let cfg = RenderConfig::default();
    let [a, b, c] = render_quartile_view(&constant, &tf, &cam, &cfg).unwrap();
    assert!(a == b && b == c);

    let outlier = inject_outlier(&e, 3, 5.0).unwrap();
    let [lo, mid, hi] = render_quartile_view(&outlier, &tf, &cam, &cfg).unwrap();
    assert!(image_diff(&lo, &mid).unwrap().differing_pixels > 0);
    assert!(image_diff(&hi, &mid).unwrap().differing_pixels > 0);
    let [lower, middle, upper] = eddyscope_core::noise::quartile_split(&outlier).unwrap();
    assert_eq!(mid, render(&middle, &tf, &cam, &cfg, RenderMode::Expected).unwrap());
    assert_eq!(lo, render(&lower, &tf, &cam, &cfg, RenderMode::Expected).unwrap());
    assert_eq!(hi, render(&upper, &tf, &cam, &cfg, RenderMode::Expected).unwrap());
}

#[test]
fn fewer_members_change_the_render() {
    let e = synth_volume(0.2);
    let tf = preset_for(&e);
    let half = e.subsample(e.len() / 2, 3).unwrap();
    let a = FitOptions::default().fit(ModelKind::Uniform, &e).unwrap();
    let b = FitOptions::default().fit(ModelKind::Uniform, &half).unwrap();
    let cam = Camera::orbit(&a, 35.0, 30.0, 1.6, 32, 32);
    let cfg = RenderConfig::default();
    let d = image_diff(
        &render(&a, &tf, &cam, &cfg, RenderMode::Expected).unwrap(),
        &render(&b, &tf, &cam, &cfg, RenderMode::Expected).unwrap(),
    )
    .unwrap();
    assert!(d.mean_abs > 0.0);
}

fn drifting_steps(outliers: bool) -> BTreeMap<u32, Ensemble> {
    (36..=40)
        .map(|t| {
            let p = SynthParams::new(13, 8, Dims::new(32, 32, 16).unwrap(), 5, 0.2).at_time(t, 0.5);
            let mut e = synth_eddy_ensemble(&p).unwrap().ensemble;
            if outliers {
                // a different member misbehaves at every step
                e = inject_outlier(&e, t as usize % 8, 5.0).unwrap();
            }
            (t, e)
        })
        .collect()
}

fn frame_fluctuation(frames: &[eddyscope_core::Image]) -> f64 {
    frames.windows(2).map(|w| image_diff(&w[0], &w[1]).unwrap().mean_abs).sum::<f64>() / (frames.len() - 1) as f64
}

#[test]
fn time_series_mean_model_fluctuates_more_than_interquartile() {
    let steps = drifting_steps(true);
    let tf = preset_for(&drifting_steps(false)[&36]);
    let times: Vec<u32> = (36..=40).collect();
    let fit = FitOptions::default();
    let cam = Camera::orbit(&fit.fit(ModelKind::Mean, &steps[&36]).unwrap(), 35.0, 40.0, 1.6, 40, 40);
    let cfg = RenderConfig::default();
    let mean = render_time_series(&steps, &times, ModelKind::Mean, &fit, &tf, &cam, &cfg).unwrap();
    assert_eq!(mean.iter().map(|f| f.0).collect::<Vec<_>>(), times);
    let mean: Vec<_> = mean.into_iter().map(|f| f.1).collect();
    let iqr: Vec<_> = steps
        .values()
        .map(|e| {
            let middle = &eddyscope_core::noise::quartile_split(e).unwrap()[1];
            render(middle, &tf, &cam, &cfg, RenderMode::Expected).unwrap()
        })
        .collect();
    let (fm, fq) = (frame_fluctuation(&mean), frame_fluctuation(&iqr));
    assert!(fm > fq, "mean-model fluctuation {fm} vs interquartile {fq}");

    let single = render_time_series(&steps, &[38], ModelKind::Mean, &fit, &tf, &cam, &cfg).unwrap();
    let direct = render(&fit.fit(ModelKind::Mean, &steps[&38]).unwrap(), &tf, &cam, &cfg, RenderMode::Expected).unwrap();
    assert_eq!(single[0].1, direct);
    match render_time_series(&steps, &[35], ModelKind::Mean, &fit, &tf, &cam, &cfg) {
        Err(eddyscope_core::Error::Data(msg)) => assert!(msg.contains("35")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn time_constant_series_repeats_frames() {
    let e = synth_volume(0.1);
    let steps: BTreeMap<u32, Ensemble> = (0..3).map(|t| (t, e.clone())).collect();
    let tf = preset_for(&e);
    let fit = FitOptions::default();
    let cam = Camera::orbit(&fit.fit(ModelKind::Mean, &e).unwrap(), 35.0, 40.0, 1.6, 16, 16);
    let frames = render_time_series(&steps, &[0, 1, 2], ModelKind::Gaussian, &fit, &tf, &cam, &RenderConfig::default()).unwrap();
    assert!(frames.windows(2).all(|w| w[0].1 == w[1].1));
}
