//! Association of maxima across ensemble members to shared global labels.
//!
//! Three strategies are provided: k-means over pooled maxima positions,
//! Morse mapping through the cells of a reference member, and labeling by
//! the nearest mandatory region. Positions are `[x, y]` in pixels.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;
use crate::morse::{DestinationMap, Plane};
use crate::pmap::palette_color;
use crate::rng::stream_rng;
use crate::unionfind::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    KMeans,
    MorseMapping,
    NearestMandatory,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::KMeans, Strategy::MorseMapping, Strategy::NearestMandatory];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::KMeans => "kmeans",
            Strategy::MorseMapping => "morse_mapping",
            Strategy::NearestMandatory => "nearest_mandatory",
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "k-means" => Ok(Strategy::KMeans),
            "morse_mapping" | "morse-mapping" | "morse" => Ok(Strategy::MorseMapping),
            "nearest_mandatory" | "nearest-mandatory" | "mandatory" => Ok(Strategy::NearestMandatory),
            other => Err(Error::Argument(format!("unknown labeling strategy `{other}`"))),
        }
    }
}

/// Global label of every maximum of every member.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAssignment {
    pub strategy: Strategy,
    /// `labels[member][maximum]`, members in input order.
    pub labels: Vec<Vec<u32>>,
    /// Representative position of each label (centroid, reference
    /// maximum, or region centroid).
    pub anchors: Vec<[f64; 2]>,
    pub palette: Vec<[u8; 3]>,
}

impl LabelAssignment {
    fn new(strategy: Strategy, labels: Vec<Vec<u32>>, anchors: Vec<[f64; 2]>) -> Self {
        let palette = (0..anchors.len()).map(palette_color).collect();
        Self { strategy, labels, anchors, palette }
    }

    pub fn label_count(&self) -> usize {
        self.anchors.len()
    }

    /// Labels that at least one maximum carries.
    pub fn used_labels(&self) -> Vec<u32> {
        let mut used: Vec<u32> = self.labels.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Positions of the maxima of a destination map, in map order.
pub fn maxima_positions(dest: &DestinationMap) -> Vec<[f64; 2]> {
    (0..dest.maxima.len())
        .map(|i| {
            let (x, y) = dest.maximum_position(i);
            [x, y]
        })
        .collect()
}

const KMEANS_MAX_ITERATIONS: usize = 100;
const KMEANS_RESTARTS: u64 = 8;

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

fn cmp_yx(a: &[f64; 2], b: &[f64; 2]) -> Ordering {
    a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0]))
}

fn nearest(anchors: &[[f64; 2]], p: [f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &a) in anchors.iter().enumerate() {
        let d = dist2(a, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// One k-means++ seeding followed by Lloyd iterations; returns centroids
/// and inertia.
fn lloyd(points: &[[f64; 2]], k: usize, seed: u64, restart: u64) -> (Vec<[f64; 2]>, f64) {
    let mut rng = stream_rng(seed, restart);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, c));
        }
    }

    let mut assign: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p)).collect();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut sums = alloc::vec![[0.0f64; 3]; k];
        for (&a, &p) in assign.iter().zip(points) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            // empty clusters keep their centroid
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let inertia = points.iter().zip(&assign).map(|(&p, &a)| dist2(p, centroids[a])).sum();
    (centroids, inertia)
}

/// k-means over the pooled positions of all members' maxima. A few
/// seeded restarts are run and the lowest-inertia clustering is kept;
/// clusters are numbered by centroid in (y, x) order, which makes the
/// result independent of member order.
pub fn label_kmeans(members: &[Vec<[f64; 2]>], k: usize, seed: u64) -> Result<LabelAssignment> {
    let mut points: Vec<[f64; 2]> = members.iter().flatten().copied().collect();
    if k == 0 {
        return Err(Error::Argument("k must be ≥ 1".into()));
    }
    if k > points.len() {
        return Err(Error::Argument(format!("k = {k} exceeds the {} pooled maxima", points.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Argument("maxima positions must be finite".into()));
    }
    points.sort_by(cmp_yx);

    let mut best: Option<(Vec<[f64; 2]>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let run = lloyd(&points, k, seed, restart);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let mut centroids = best.expect("at least one restart").0;
    centroids.sort_by(cmp_yx);
    let labels = members
        .iter()
        .map(|ms| ms.iter().map(|&p| nearest(&centroids, p) as u32).collect())
        .collect();
    Ok(LabelAssignment::new(Strategy::KMeans, labels, centroids))
}

/// Index of the reference member: the lowest member id whose maxima count
/// equals the modal count (ties for the mode go to the larger count).
pub fn reference_member(member_ids: &[u32], maxima_counts: &[usize]) -> Result<usize> {
    if member_ids.is_empty() || member_ids.len() != maxima_counts.len() {
        return Err(Error::Argument(format!(
            "{} member ids for {} maxima counts",
            member_ids.len(),
            maxima_counts.len()
        )));
    }
    let mut sorted = maxima_counts.to_vec();
    sorted.sort_unstable();
    let (mut mode, mut run) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&c| c == sorted[i]).count();
        if j >= run {
            (mode, run) = (sorted[i], j);
        }
        i += j;
    }
    (0..member_ids.len())
        .filter(|&i| maxima_counts[i] == mode)
        .min_by_key(|&i| member_ids[i])
        .ok_or_else(|| Error::Argument("no reference member".into()))
}

/// Each maximum of each member takes the label of the reference member's
/// cell containing it; the reference's own maxima are labeled in order.
pub fn label_morse_mapping(members: &[DestinationMap], reference: usize) -> Result<LabelAssignment> {
    let r = members
        .get(reference)
        .ok_or_else(|| Error::Index(format!("reference member {reference} of {}", members.len())))?;
    if r.maxima.is_empty() {
        return Err(Error::Argument("reference member has no maxima".into()));
    }
    let mut labels = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        if (m.nx, m.ny) != (r.nx, r.ny) {
            return Err(Error::Dimension(format!(
                "member {i} is {}x{}, reference {}x{}",
                m.nx, m.ny, r.nx, r.ny
            )));
        }
        labels.push(m.maxima.iter().map(|mx| r.labels[mx.pixel]).collect());
    }
    Ok(LabelAssignment::new(Strategy::MorseMapping, labels, maxima_positions(r)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MandatoryRegion {
    /// Ascending linear pixel indices.
    pub pixels: Vec<usize>,
    /// The lower-envelope level at which the region is reported.
    pub level: f64,
    /// `[level, highest upper-envelope value over the region]`.
    pub interval: [f64; 2],
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MandatoryRegionSet {
    pub nx: usize,
    pub ny: usize,
    pub regions: Vec<MandatoryRegion>,
}

impl MandatoryRegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Region id per pixel, `None` outside every region.
    pub fn region_map(&self) -> Vec<Option<u32>> {
        let mut map = alloc::vec![None; self.nx * self.ny];
        for (id, r) in self.regions.iter().enumerate() {
            for &p in &r.pixels {
                map[p] = Some(id as u32);
            }
        }
        map
    }
}

/// Envelope variant of mandatory maxima. Superlevel components of the
/// pointwise minimum over members are swept downward through its distinct
/// values (stopping below `min_level`); a component is reported the first
/// time every member has one of its `maxima` pixels inside it, unless it
/// already contains a reported component.
pub fn mandatory_maxima(fields: &[ScalarGrid], maxima: &[Vec<usize>], min_level: f64) -> Result<MandatoryRegionSet> {
    let m = fields.len();
    if m < 2 {
        return Err(Error::Argument(format!("mandatory maxima need at least 2 members, got {m}")));
    }
    if maxima.len() != m {
        return Err(Error::Argument(format!("{} maxima lists for {m} members", maxima.len())));
    }
    let first = Plane::of(&fields[0])?;
    let (nx, ny) = (first.nx, first.ny);
    let n = nx * ny;
    let mut lower: Vec<f32> = first.values.to_vec();
    let mut upper: Vec<f32> = first.values.to_vec();
    for f in &fields[1..] {
        let p = Plane::of(f)?;
        if (p.nx, p.ny) != (nx, ny) {
            return Err(Error::Dimension(format!("member is {}x{}, expected {nx}x{ny}", p.nx, p.ny)));
        }
        for i in 0..n {
            lower[i] = lower[i].min(p.values[i]);
            upper[i] = upper[i].max(p.values[i]);
        }
    }

    let words = m.div_ceil(64);
    let mut owners: Vec<Vec<u32>> = alloc::vec![Vec::new(); n];
    for (member, list) in maxima.iter().enumerate() {
        for &p in list {
            if p >= n {
                return Err(Error::Index(format!("maximum pixel {p} outside {nx}x{ny}")));
            }
            owners[p].push(member as u32);
        }
    }

    let env = Plane { nx, ny, values: &lower };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| env.cmp(b, a));

    let mut uf = UnionFind::new(n);
    let mut added = alloc::vec![false; n];
    let mut cover = alloc::vec![0u64; n * words];
    let mut count = alloc::vec![0usize; n];
    let mut members_in: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    let mut blocked = alloc::vec![false; n];
    let mut regions = Vec::new();
    let mut touched = Vec::new();

    let mut i = 0;
    while i < n {
        let level = lower[order[i]];
        if (level as f64) < min_level {
            break;
        }
        let mut j = i;
        touched.clear();
        while j < n && lower[order[j]] == level {
            let p = order[j];
            added[p] = true;
            members_in[p].push(p);
            for &o in &owners[p] {
                let w = &mut cover[p * words + (o as usize) / 64];
                let bit = 1u64 << (o % 64);
                if *w & bit == 0 {
                    *w |= bit;
                    count[p] += 1;
                }
            }
            let neigh: Vec<usize> = env.neighbors8(p).filter(|&q| added[q]).collect();
            let mut root = uf.find(p);
            for q in neigh {
                let rq = uf.find(q);
                if rq != root {
                    root = merge(&mut uf, root, rq, words, &mut cover, &mut count, &mut members_in, &mut blocked);
                }
            }
            touched.push(p);
            j += 1;
        }
        let mut roots: Vec<usize> = touched.iter().map(|&p| uf.find(p)).collect();
        roots.sort_unstable();
        roots.dedup();
        for r in roots {
            if !blocked[r] && count[r] == m {
                blocked[r] = true;
                let mut pixels = members_in[r].clone();
                pixels.sort_unstable();
                let top = pixels.iter().map(|&p| upper[p] as f64).fold(f64::NEG_INFINITY, f64::max);
                let (sx, sy) = pixels
                    .iter()
                    .fold((0.0, 0.0), |(sx, sy), &p| (sx + (p % nx) as f64, sy + (p / nx) as f64));
                let k = pixels.len() as f64;
                regions.push(MandatoryRegion {
                    pixels,
                    level: level as f64,
                    interval: [level as f64, top],
                    centroid: [sx / k, sy / k],
                });
            }
        }
        i = j;
    }
    // deterministic order independent of sweep ties
    regions.sort_by(|a, b| a.pixels[0].cmp(&b.pixels[0]));
    Ok(MandatoryRegionSet { nx, ny, regions })
}

#[allow(clippy::too_many_arguments)]
fn merge(
    uf: &mut UnionFind,
    a: usize,
    b: usize,
    words: usize,
    cover: &mut [u64],
    count: &mut [usize],
    members_in: &mut [Vec<usize>],
    blocked: &mut [bool],
) -> usize {
    let root = uf.union(a, b);
    let other = if root == a { b } else { a };
    let mut c = 0;
    for w in 0..words {
        let v = cover[root * words + w] | cover[other * words + w];
        cover[root * words + w] = v;
        c += v.count_ones() as usize;
    }
    count[root] = c;
    let moved = core::mem::take(&mut members_in[other]);
    if members_in[root].len() < moved.len() {
        let small = core::mem::replace(&mut members_in[root], moved);
        members_in[root].extend(small);
    } else {
        members_in[root].extend(moved);
    }
    blocked[root] |= blocked[other];
    root
}

/// Labels every maximum with its nearest region centroid (lowest region
/// id on ties).
pub fn label_nearest_mandatory(members: &[Vec<[f64; 2]>], regions: &MandatoryRegionSet) -> Result<LabelAssignment> {
    if regions.is_empty() {
        return Err(Error::Argument("no mandatory regions to label with".into()));
    }
    let anchors: Vec<[f64; 2]> = regions.regions.iter().map(|r| r.centroid).collect();
    let labels = members
        .iter()
        .map(|ms| ms.iter().map(|&p| nearest(&anchors, p) as u32).collect())
        .collect();
    Ok(LabelAssignment::new(Strategy::NearestMandatory, labels, anchors))
}
