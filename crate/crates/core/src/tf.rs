//! Piecewise-linear scalar → RGBA transfer functions.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type Rgba = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub s: f64,
    pub rgba: Rgba,
}

impl ControlPoint {
    pub fn new(s: f64, r: f64, g: f64, b: f64, a: f64) -> Self {
        Self { s, rgba: [r, g, b, a] }
    }
}

/// Linear interpolation between control points, clamped beyond both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    points: Vec<ControlPoint>,
}

impl TransferFunction {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TransferFunction(format!(
                "need at least 2 control points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.s.is_finite() {
                return Err(Error::TransferFunction(format!("point {i}: scalar is not finite")));
            }
            if let Some(c) = p.rgba.iter().position(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::TransferFunction(format!(
                    "point {i}: channel {} = {} outside [0, 1]",
                    ["r", "g", "b", "a"][c],
                    p.rgba[c]
                )));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].s <= w[0].s) {
            return Err(Error::TransferFunction(format!(
                "scalars must be strictly increasing (points {} and {})",
                i,
                i + 1
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    pub fn first_s(&self) -> f64 {
        self.points[0].s
    }

    pub fn last_s(&self) -> f64 {
        self.points[self.points.len() - 1].s
    }

    pub fn eval(&self, s: f64) -> Rgba {
        let pts = &self.points;
        if s <= pts[0].s {
            return pts[0].rgba;
        }
        let last = pts.len() - 1;
        if s >= pts[last].s {
            return pts[last].rgba;
        }
        // first point with p.s > s; guaranteed in 1..=last
        let hi = pts.partition_point(|p| p.s <= s);
        let (a, b) = (&pts[hi - 1], &pts[hi]);
        let t = (s - a.s) / (b.s - a.s);
        let mut out = [0.0; 4];
        for c in 0..4 {
            out[c] = a.rgba[c] + t * (b.rgba[c] - a.rgba[c]);
        }
        out
    }

    /// Exact `∫_lo^hi TF(s) ds` per channel, including the clamped tails.
    pub fn integral(&self, lo: f64, hi: f64) -> Rgba {
        let mut acc = [0.0; 4];
        if hi <= lo {
            return acc;
        }
        let mut add = |x0: f64, x1: f64| {
            if x1 > x0 {
                let (f0, f1) = (self.eval(x0), self.eval(x1));
                for c in 0..4 {
                    acc[c] += 0.5 * (f0[c] + f1[c]) * (x1 - x0);
                }
            }
        };
        let mut cursor = lo;
        for p in &self.points {
            if p.s >= hi {
                break;
            }
            if p.s > cursor {
                add(cursor, p.s);
                cursor = p.s;
            }
        }
        add(cursor, hi);
        acc
    }

    /// Mean of the TF over `[lo, hi]`; `TF(lo)` when the interval is degenerate.
    pub fn mean_over(&self, lo: f64, hi: f64) -> Rgba {
        if hi <= lo {
            return self.eval(lo);
        }
        let mut m = self.integral(lo, hi);
        let w = hi - lo;
        for c in m.iter_mut() {
            *c /= w;
        }
        m
    }

    /// Yellow → blue → red for low → moderate → high values, anchored at
    /// 0.2 / 0.5 / 0.8 of `[min, max]`.
    pub fn preset_eddy(min: f64, max: f64) -> Self {
        let range = if max > min { max - min } else { 1.0 };
        let at = |f: f64| min + f * range;
        let yellow = (1.0, 0.85, 0.1);
        let blue = (0.1, 0.3, 0.9);
        let red = (0.9, 0.1, 0.1);
        let cp = |s: f64, c: (f64, f64, f64), a: f64| ControlPoint::new(s, c.0, c.1, c.2, a);
        Self::new(alloc::vec![
            cp(at(0.0), yellow, 0.0),
            cp(at(0.2), yellow, 0.03),
            cp(at(0.5), blue, 0.15),
            cp(at(0.8), red, 0.6),
            cp(at(1.0), red, 0.8),
        ])
        .expect("preset is well formed")
    }

    /// A TF with the same color everywhere.
    pub fn constant(rgba: Rgba) -> Result<Self> {
        Self::new(alloc::vec![
            ControlPoint { s: 0.0, rgba },
            ControlPoint { s: 1.0, rgba },
        ])
    }
}
