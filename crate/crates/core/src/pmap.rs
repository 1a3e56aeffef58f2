//! Per-pixel distributions over global labels and the views derived from
//! them: color blend, expected cell boundaries, entropy and agreement.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labeling::LabelAssignment;
use crate::morse::{partition_boundaries, DestinationMap};

/// Categorical palette, indexed by label id modulo its length.
pub const PALETTE: [[u8; 3]; 16] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
    [152, 223, 138],
    [255, 152, 150],
    [197, 176, 213],
    [219, 219, 141],
];

pub fn palette_color(label: usize) -> [u8; 3] {
    PALETTE[label % PALETTE.len()]
}

const WHITE: [u8; 4] = [255, 255, 255, 255];
const BLACK: [u8; 4] = [0, 0, 0, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    Blend,
    Boundaries,
    Entropy,
    Agreement,
}

impl ViewMode {
    pub fn name(self) -> &'static str {
        match self {
            ViewMode::Blend => "blend",
            ViewMode::Boundaries => "boundaries",
            ViewMode::Entropy => "entropy",
            ViewMode::Agreement => "agreement",
        }
    }
}

impl core::str::FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blend" => Ok(ViewMode::Blend),
            "boundaries" => Ok(ViewMode::Boundaries),
            "entropy" => Ok(ViewMode::Entropy),
            "agreement" | "agree" => Ok(ViewMode::Agreement),
            other => Err(Error::Argument(format!("unknown view mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryEntry {
    pub label: u32,
    pub probability: f64,
    pub color: [u8; 3],
}

/// Fraction of members whose gradient destination at a pixel carries each
/// label. Stored as integer counts so probabilities are exact multiples
/// of `1/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticMap {
    nx: usize,
    ny: usize,
    members: usize,
    labels: usize,
    /// Pixel-major: `counts[p * labels + l]`.
    counts: Vec<u32>,
}

impl ProbabilisticMap {
    pub fn from_destinations(maps: &[DestinationMap], assignment: &LabelAssignment) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::Argument("no members".into()))?;
        let (nx, ny) = (first.nx, first.ny);
        if assignment.labels.len() != maps.len() {
            return Err(Error::Argument(format!(
                "assignment covers {} members, got {} maps",
                assignment.labels.len(),
                maps.len()
            )));
        }
        let labels = assignment.label_count();
        let mut counts = alloc::vec![0u32; nx * ny * labels];
        for (member, (map, member_labels)) in maps.iter().zip(&assignment.labels).enumerate() {
            if (map.nx, map.ny) != (nx, ny) {
                return Err(Error::Dimension(format!(
                    "member {member} is {}x{}, expected {nx}x{ny}",
                    map.nx, map.ny
                )));
            }
            for maximum in 0..map.maxima.len() {
                match member_labels.get(maximum) {
                    Some(&l) if (l as usize) < labels => {}
                    _ => return Err(Error::Consistency { member, maximum }),
                }
            }
            for (p, &m) in map.labels.iter().enumerate() {
                let l = member_labels[m as usize] as usize;
                counts[p * labels + l] += 1;
            }
        }
        Ok(Self { nx, ny, members: maps.len(), labels, counts })
    }

    /// Rebuilds a map from probability planes (`planes[l][p]`), rounding
    /// each entry to the nearest multiple of `1/members`.
    pub fn from_probability_planes(nx: usize, ny: usize, members: usize, planes: &[Vec<f32>]) -> Result<Self> {
        if members == 0 {
            return Err(Error::Argument("member count must be ≥ 1".into()));
        }
        let labels = planes.len();
        let n = nx * ny;
        let mut counts = alloc::vec![0u32; n * labels];
        for (l, plane) in planes.iter().enumerate() {
            if plane.len() != n {
                return Err(Error::Dimension(format!("plane {l} has {} entries, expected {n}", plane.len())));
            }
            for (p, &v) in plane.iter().enumerate() {
                let c = v as f64 * members as f64;
                let r = libm::round(c);
                if !(r >= 0.0 && (c - r).abs() < 1e-3) {
                    return Err(Error::Data(format!("probability {v} at pixel {p} is not a multiple of 1/{members}")));
                }
                counts[p * labels + l] = r as u32;
            }
        }
        for p in 0..n {
            let s: u32 = counts[p * labels..(p + 1) * labels].iter().sum();
            if s as usize != members {
                return Err(Error::Data(format!("probabilities at pixel {p} sum to {s}/{members}")));
            }
        }
        Ok(Self { nx, ny, members, labels, counts })
    }

    pub fn width(&self) -> usize {
        self.nx
    }

    pub fn height(&self) -> usize {
        self.ny
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn label_count(&self) -> usize {
        self.labels
    }

    pub fn counts_at(&self, pixel: usize) -> &[u32] {
        &self.counts[pixel * self.labels..(pixel + 1) * self.labels]
    }

    pub fn probabilities_at(&self, pixel: usize) -> Vec<f64> {
        let m = self.members as f64;
        self.counts_at(pixel).iter().map(|&c| c as f64 / m).collect()
    }

    /// Label-major probability planes, as stored on disk.
    pub fn probability_planes(&self) -> Vec<Vec<f32>> {
        let m = self.members as f64;
        (0..self.labels)
            .map(|l| (0..self.nx * self.ny).map(|p| (self.counts[p * self.labels + l] as f64 / m) as f32).collect())
            .collect()
    }

    /// Modal label, lowest id on ties.
    pub fn argmax(&self, pixel: usize) -> u32 {
        let c = self.counts_at(pixel);
        let mut best = 0;
        for (l, &v) in c.iter().enumerate() {
            if v > c[best] {
                best = l;
            }
        }
        best as u32
    }

    pub fn max_probability(&self, pixel: usize) -> f64 {
        let c = self.counts_at(pixel);
        c.iter().copied().max().unwrap_or(0) as f64 / self.members as f64
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self, pixel: usize) -> f64 {
        let m = self.members as f64;
        let h: f64 = self
            .counts_at(pixel)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / m;
                -p * libm::log2(p)
            })
            .sum();
        // one-hot pixels give -1·log2(1) = -0.0
        h.max(0.0)
    }

    pub fn entropy_map(&self) -> Vec<f64> {
        (0..self.nx * self.ny).map(|p| self.entropy(p)).collect()
    }

    pub fn entropy_mask(&self, tau: f64) -> Result<Vec<bool>> {
        if !(tau >= 0.0) {
            return Err(Error::Argument(format!("entropy threshold {tau} must be ≥ 0")));
        }
        Ok((0..self.nx * self.ny).map(|p| self.entropy(p) >= tau).collect())
    }

    pub fn agreement_mask(&self, alpha: f64) -> Result<Vec<bool>> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Argument(format!("agreement threshold {alpha} outside (0, 1]")));
        }
        // compare counts so α = 1 is exact
        let need = alpha * self.members as f64;
        Ok((0..self.nx * self.ny)
            .map(|p| self.counts_at(p).iter().any(|&c| c as f64 >= need - 1e-9))
            .collect())
    }

    /// Argmax partition of the domain.
    pub fn modal_labels(&self) -> Vec<u32> {
        (0..self.nx * self.ny).map(|p| self.argmax(p)).collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        partition_boundaries(self.nx, self.ny, &self.modal_labels())
    }

    fn check_palette(&self, palette: &[[u8; 3]]) -> Result<()> {
        if palette.len() < self.labels {
            return Err(Error::Argument(format!(
                "palette has {} colors for {} labels",
                palette.len(),
                self.labels
            )));
        }
        Ok(())
    }

    pub fn blend_color(&self, pixel: usize, palette: &[[u8; 3]]) -> [u8; 4] {
        let m = self.members as f64;
        let mut acc = [0.0f64; 3];
        for (l, &c) in self.counts_at(pixel).iter().enumerate() {
            if c > 0 {
                let p = c as f64 / m;
                for k in 0..3 {
                    acc[k] += p * palette[l][k] as f64;
                }
            }
        }
        let q = |v: f64| libm::round(v).clamp(0.0, 255.0) as u8;
        [q(acc[0]), q(acc[1]), q(acc[2]), 255]
    }

    pub fn blend(&self, palette: &[[u8; 3]]) -> Result<Image> {
        self.check_palette(palette)?;
        Ok(self.paint(|p| self.blend_color(p, palette)))
    }

    /// Renders a view. `param` is τ for entropy and α for agreement and is
    /// ignored otherwise. Pixels outside a threshold mask are white.
    pub fn view(&self, mode: ViewMode, palette: &[[u8; 3]], param: f64) -> Result<Image> {
        self.check_palette(palette)?;
        let mask = match mode {
            ViewMode::Blend => return self.blend(palette),
            ViewMode::Boundaries => {
                let b = self.boundary_mask();
                return Ok(self.paint(|p| if b[p] { BLACK } else { self.blend_color(p, palette) }));
            }
            ViewMode::Entropy => self.entropy_mask(param)?,
            ViewMode::Agreement => self.agreement_mask(param)?,
        };
        Ok(self.paint(|p| if mask[p] { self.blend_color(p, palette) } else { WHITE }))
    }

    fn paint(&self, f: impl Fn(usize) -> [u8; 4]) -> Image {
        let mut px = Vec::with_capacity(4 * self.nx * self.ny);
        for p in 0..self.nx * self.ny {
            px.extend_from_slice(&f(p));
        }
        Image::new(self.nx, self.ny, px).expect("sized to the map")
    }

    /// Labels with nonzero probability at `(x, y)`, most probable first,
    /// ties by label id.
    pub fn query(&self, x: usize, y: usize, palette: &[[u8; 3]]) -> Result<Vec<QueryEntry>> {
        if x >= self.nx || y >= self.ny {
            return Err(Error::Index(format!("pixel ({x}, {y}) outside {}x{}", self.nx, self.ny)));
        }
        self.check_palette(palette)?;
        let p = x + y * self.nx;
        let c = self.counts_at(p);
        let mut nz: Vec<u32> = (0..self.labels as u32).filter(|&l| c[l as usize] > 0).collect();
        nz.sort_by(|&a, &b| c[b as usize].cmp(&c[a as usize]).then(a.cmp(&b)));
        let m = self.members as f64;
        Ok(nz
            .into_iter()
            .map(|l| QueryEntry { label: l, probability: c[l as usize] as f64 / m, color: palette[l as usize] })
            .collect())
    }
}
