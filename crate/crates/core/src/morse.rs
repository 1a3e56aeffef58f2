//! Morse cells of 2D scalar fields by steepest ascent, persistence of maxima
//! by the elder rule, and persistence simplification.
//!
//! Pixels are totally ordered by `(value, linear index)`, so plateaus and
//! ties never make an operation ambiguous. Ascent uses 8-connectivity and
//! so does the superlevel-set sweep; cell boundaries use 4-connectivity.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;
use crate::unionfind::UnionFind;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Plane<'a> {
    pub nx: usize,
    pub ny: usize,
    pub values: &'a [f32],
}

impl<'a> Plane<'a> {
    pub fn of(grid: &'a ScalarGrid) -> Result<Self> {
        let d = grid.dims();
        if d.nz != 1 {
            return Err(Error::Dimension(format!(
                "Morse cells need a 2D grid, got nz = {}",
                d.nz
            )));
        }
        Ok(Self { nx: d.nx, ny: d.ny, values: grid.values() })
    }

    /// Total order on pixels: value first, linear index second.
    #[inline]
    pub fn cmp(&self, a: usize, b: usize) -> Ordering {
        self.values[a].total_cmp(&self.values[b]).then(a.cmp(&b))
    }

    #[inline]
    pub fn higher(&self, a: usize, b: usize) -> bool {
        self.cmp(a, b) == Ordering::Greater
    }

    /// In-bounds 8-neighbors in increasing linear index.
    pub fn neighbors8(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = ((p % self.nx) as isize, (p / self.nx) as isize);
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (qx, qy) = (x + dx, y + dy);
                (qx >= 0 && qy >= 0 && qx < nx && qy < ny).then(|| (qx + qy * nx) as usize)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub pixel: usize,
    pub value: f64,
}

/// Per-pixel id of the maximum reached by steepest ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationMap {
    pub nx: usize,
    pub ny: usize,
    /// `labels[p]` indexes `maxima`.
    pub labels: Vec<u32>,
    /// Sorted by pixel index.
    pub maxima: Vec<Maximum>,
}

impl DestinationMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[x + y * self.nx]
    }

    pub fn maximum_of(&self, pixel: usize) -> Maximum {
        self.maxima[self.labels[pixel] as usize]
    }

    pub fn maximum_position(&self, id: usize) -> (f64, f64) {
        let p = self.maxima[id].pixel;
        ((p % self.nx) as f64, (p / self.nx) as f64)
    }

    /// Pixel count of each cell.
    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.maxima.len()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Steepest ascent: every pixel points at its highest 8-neighbor that is
/// above it in the total order (lowest index among equal values), and the
/// chain is followed to a pixel with no higher neighbor.
pub fn compute_destinations(grid: &ScalarGrid) -> Result<DestinationMap> {
    let plane = Plane::of(grid)?;
    Ok(destinations_of(&plane))
}

pub(crate) fn steepest_neighbor(plane: &Plane<'_>, p: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for q in plane.neighbors8(p) {
        if !plane.higher(q, p) {
            continue;
        }
        best = match best {
            None => Some(q),
            // neighbors arrive in increasing index, so only a strictly
            // larger value replaces the incumbent
            Some(b) if plane.values[q] > plane.values[b] => Some(q),
            keep => keep,
        };
    }
    best
}

fn destinations_of(plane: &Plane<'_>) -> DestinationMap {
    let n = plane.nx * plane.ny;
    let next: Vec<Option<usize>> = (0..n).map(|p| steepest_neighbor(plane, p)).collect();
    let maxima: Vec<Maximum> = (0..n)
        .filter(|&p| next[p].is_none())
        .map(|p| Maximum { pixel: p, value: plane.values[p] as f64 })
        .collect();
    const UNSET: u32 = u32::MAX;
    let mut labels = alloc::vec![UNSET; n];
    for (id, m) in maxima.iter().enumerate() {
        labels[m.pixel] = id as u32;
    }
    let mut path = Vec::new();
    for start in 0..n {
        let mut p = start;
        while labels[p] == UNSET {
            path.push(p);
            p = next[p].expect("non-maxima have a successor");
        }
        let l = labels[p];
        for q in path.drain(..) {
            labels[q] = l;
        }
    }
    DestinationMap { nx: plane.nx, ny: plane.ny, labels, maxima }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedMaximum {
    pub pixel: usize,
    pub value: f64,
    /// Peak value minus the level of the merge into an elder component;
    /// the global maximum carries `f_max - f_min`.
    pub persistence: f64,
    /// Merge pixel; `None` for the global maximum.
    pub saddle: Option<usize>,
    /// Index of the elder maximum absorbing this one at the saddle.
    pub merged_into: Option<usize>,
}

/// Persistence of every maximum, indexed like [`DestinationMap::maxima`].
#[derive(Debug, Clone, PartialEq)]
pub struct PersistencePairing {
    pub maxima: Vec<PairedMaximum>,
    pub global: usize,
}

impl PersistencePairing {
    pub fn persistences(&self) -> Vec<f64> {
        self.maxima.iter().map(|m| m.persistence).collect()
    }
}

/// Superlevel-set sweep with union-find; when components meet, the one
/// with the lower peak dies there.
pub fn compute_persistence(grid: &ScalarGrid) -> Result<PersistencePairing> {
    let plane = Plane::of(grid)?;
    Ok(persistence_of(&plane))
}

fn persistence_of(plane: &Plane<'_>) -> PersistencePairing {
    let n = plane.nx * plane.ny;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| plane.cmp(b, a));

    let maxima_pixels: Vec<usize> = (0..n).filter(|&p| steepest_neighbor(plane, p).is_none()).collect();
    let id_of = |pixel: usize| maxima_pixels.binary_search(&pixel).expect("peak is a maximum");
    let mut out: Vec<PairedMaximum> = maxima_pixels
        .iter()
        .map(|&p| PairedMaximum {
            pixel: p,
            value: plane.values[p] as f64,
            persistence: 0.0,
            saddle: None,
            merged_into: None,
        })
        .collect();

    let mut uf = UnionFind::new(n);
    let mut done = alloc::vec![false; n];
    let mut peak = alloc::vec![usize::MAX; n];
    let mut roots: Vec<usize> = Vec::with_capacity(8);
    for &p in &order {
        roots.clear();
        for q in plane.neighbors8(p) {
            if done[q] {
                let r = uf.find(q);
                if !roots.contains(&r) {
                    roots.push(r);
                }
            }
        }
        done[p] = true;
        if roots.is_empty() {
            peak[p] = p;
            continue;
        }
        let elder = roots
            .iter()
            .copied()
            .max_by(|&a, &b| plane.cmp(peak[a], peak[b]))
            .expect("non-empty");
        let elder_peak = peak[elder];
        let level = plane.values[p] as f64;
        for &r in &roots {
            if r != elder {
                let m = &mut out[id_of(peak[r])];
                m.persistence = m.value - level;
                m.saddle = Some(p);
                m.merged_into = Some(id_of(elder_peak));
            }
        }
        let mut root = uf.union(elder, p);
        for &r in &roots {
            root = uf.union(root, r);
        }
        peak[root] = elder_peak;
    }

    let global = id_of(order[0]);
    let lowest = plane.values[order[n - 1]] as f64;
    out[global].persistence = out[global].value - lowest;
    PersistencePairing { maxima: out, global }
}

/// Destination map together with the pairing of its maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseComplex {
    pub destinations: DestinationMap,
    pub pairing: PersistencePairing,
}

impl MorseComplex {
    pub fn compute(grid: &ScalarGrid) -> Result<Self> {
        let plane = Plane::of(grid)?;
        Ok(Self { destinations: destinations_of(&plane), pairing: persistence_of(&plane) })
    }

    pub fn maxima_count(&self) -> usize {
        self.destinations.maxima.len()
    }

    /// Cancels every non-global maximum with persistence below `threshold`;
    /// the surviving pairing is re-indexed onto the surviving maxima.
    pub fn simplify(&self, threshold: f64) -> Result<Self> {
        let (destinations, survivor) = simplify_with_map(&self.destinations, &self.pairing, threshold)?;
        let mut new_id = alloc::vec![usize::MAX; self.pairing.maxima.len()];
        let mut kept = Vec::new();
        for (old, m) in self.pairing.maxima.iter().enumerate() {
            if survivor[old] == old {
                new_id[old] = kept.len();
                kept.push(*m);
            }
        }
        for m in kept.iter_mut() {
            m.merged_into = m.merged_into.map(|e| new_id[survivor[e]]);
        }
        let global = new_id[self.pairing.global];
        Ok(Self { destinations, pairing: PersistencePairing { maxima: kept, global } })
    }

    pub fn graph(&self) -> PersistenceGraph {
        PersistenceGraph::from_pairing(&self.pairing)
    }
}

fn survivors(pairing: &PersistencePairing, threshold: f64) -> Vec<usize> {
    let n = pairing.maxima.len();
    let cancelled =
        |m: usize| m != pairing.global && pairing.maxima[m].persistence < threshold;
    let mut survivor = alloc::vec![usize::MAX; n];
    // elders have strictly higher peaks, so visiting peaks in descending
    // order resolves every elder before its juniors
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        let (ma, mb) = (&pairing.maxima[a], &pairing.maxima[b]);
        mb.value.total_cmp(&ma.value).then(mb.pixel.cmp(&ma.pixel))
    });
    for m in order {
        survivor[m] = if cancelled(m) {
            let e = pairing.maxima[m].merged_into.expect("non-global maxima have an elder");
            survivor[e]
        } else {
            m
        };
    }
    survivor
}

fn simplify_with_map(
    dest: &DestinationMap,
    pairing: &PersistencePairing,
    threshold: f64,
) -> Result<(DestinationMap, Vec<usize>)> {
    if !(threshold >= 0.0) {
        return Err(Error::Argument(format!("threshold {threshold} must be ≥ 0")));
    }
    if pairing.maxima.len() != dest.maxima.len() {
        return Err(Error::Argument(format!(
            "pairing has {} maxima, destination map {}",
            pairing.maxima.len(),
            dest.maxima.len()
        )));
    }
    let survivor = survivors(pairing, threshold);
    let mut new_id = alloc::vec![u32::MAX; survivor.len()];
    let mut maxima = Vec::new();
    for (old, &s) in survivor.iter().enumerate() {
        if s == old {
            new_id[old] = maxima.len() as u32;
            maxima.push(dest.maxima[old]);
        }
    }
    let labels = dest.labels.iter().map(|&l| new_id[survivor[l as usize]]).collect();
    Ok((DestinationMap { nx: dest.nx, ny: dest.ny, labels, maxima }, survivor))
}

/// Merges the cells of maxima with persistence below `threshold` into
/// the cells of their elders.
pub fn simplify(dest: &DestinationMap, pairing: &PersistencePairing, threshold: f64) -> Result<DestinationMap> {
    simplify_with_map(dest, pairing, threshold).map(|(d, _)| d)
}

/// Surviving-maxima count as a function of the simplification threshold:
/// `count(t) = 1 + #{non-global maxima with persistence ≥ t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceGraph {
    /// Non-global persistences, ascending.
    persistences: Vec<f64>,
    global: f64,
}

impl PersistenceGraph {
    pub fn from_pairing(pairing: &PersistencePairing) -> Self {
        let others = pairing
            .maxima
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != pairing.global)
            .map(|(_, m)| m.persistence);
        Self::new(pairing.maxima[pairing.global].persistence, others)
    }

    pub fn new(global: f64, others: impl IntoIterator<Item = f64>) -> Self {
        let mut persistences: Vec<f64> = others.into_iter().collect();
        persistences.sort_by(f64::total_cmp);
        Self { persistences, global }
    }

    pub fn total(&self) -> usize {
        self.persistences.len() + 1
    }

    pub fn global_persistence(&self) -> f64 {
        self.global
    }

    pub fn count_at(&self, threshold: f64) -> usize {
        let below = self.persistences.partition_point(|&p| p < threshold);
        1 + self.persistences.len() - below
    }

    /// Distinct persistence values (global included), ascending.
    pub fn distinct_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.persistences.iter().copied().chain([self.global]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Step curve as `(threshold, count)` rows: `(0, total)` followed by
    /// one row per distinct persistence `d` giving the count for
    /// thresholds just above `d`.
    pub fn rows(&self) -> Vec<(f64, usize)> {
        let mut rows = alloc::vec![(0.0, self.total())];
        for d in self.distinct_values() {
            let above = self.persistences.len() - self.persistences.partition_point(|&p| p <= d);
            rows.push((d, 1 + above));
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSelection {
    pub threshold: f64,
    pub count: usize,
    pub fraction: f64,
}

/// Smallest simplification scale at which at least `target` of the
/// members share the modal maxima count. Candidate thresholds are `0` and
/// the midpoints between consecutive pooled persistence values; counts are
/// constant between those. Agreement on a lone global maximum does not
/// count. Ties for the mode go to the larger count.
pub fn select_scale(graphs: &[PersistenceGraph], target: f64) -> Result<ScaleSelection> {
    if graphs.is_empty() {
        return Err(Error::Argument(alloc::string::String::from("scale selection needs at least one member")));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Argument(format!("target agreement {target} outside (0, 1]")));
    }
    let mut pooled: Vec<f64> = graphs.iter().flat_map(|g| g.distinct_values()).collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut candidates = alloc::vec![0.0];
    candidates.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));

    let m = graphs.len() as f64;
    let mut best = 0.0f64;
    let mut counts = Vec::with_capacity(graphs.len());
    for t in candidates {
        counts.clear();
        counts.extend(graphs.iter().map(|g| g.count_at(t)));
        let (count, agree) = modal(&counts);
        if count < 2 {
            continue;
        }
        let fraction = agree as f64 / m;
        if fraction >= target {
            return Ok(ScaleSelection { threshold: t, count, fraction });
        }
        best = best.max(fraction);
    }
    Err(Error::Selection { best_fraction: best })
}

fn modal(counts: &[usize]) -> (usize, usize) {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mut best = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&c| c == sorted[i]).count();
        if j >= best.1 {
            best = (sorted[i], j);
        }
        i += j;
    }
    best
}

/// Pixels with a 4-neighbor in a different cell; out-of-domain
/// neighbors do not count.
pub fn cell_boundaries(dest: &DestinationMap) -> Vec<bool> {
    partition_boundaries(dest.nx, dest.ny, &dest.labels)
}

pub(crate) fn partition_boundaries(nx: usize, ny: usize, labels: &[u32]) -> Vec<bool> {
    let mut mask = alloc::vec![false; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let p = x + y * nx;
            let l = labels[p];
            let differs = (x > 0 && labels[p - 1] != l)
                || (x + 1 < nx && labels[p + 1] != l)
                || (y > 0 && labels[p - nx] != l)
                || (y + 1 < ny && labels[p + nx] != l);
            mask[p] = differs;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use alloc::vec;

    fn field(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> ScalarGrid {
        ScalarGrid::from_fn(Dims::planar(nx, ny).unwrap(), |x, y, _| f(x as f64, y as f64) as f32).unwrap()
    }

    fn bump(x: f64, y: f64, cx: f64, cy: f64, a: f64, s: f64) -> f64 {
        let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        a * libm::exp(-d2 / (2.0 * s * s))
    }

    #[test]
    fn single_bump_is_one_basin() {
        let g = field(15, 11, |x, y| bump(x, y, 7.0, 5.0, 1.0, 3.0));
        let d = compute_destinations(&g).unwrap();
        assert_eq!(d.maxima.len(), 1);
        assert!(d.labels.iter().all(|&l| l == 0));
        assert!(cell_boundaries(&d).iter().all(|b| !b));
    }

    #[test]
    fn two_bumps_partition_the_domain() {
        let g = field(21, 9, |x, y| bump(x, y, 4.0, 4.0, 10.0, 2.0) + bump(x, y, 16.0, 4.0, 10.0, 2.0));
        let d = compute_destinations(&g).unwrap();
        assert_eq!(d.maxima.len(), 2);
        let sizes = d.cell_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 21 * 9);
        assert!(sizes.iter().all(|&s| s > 0));
        for (id, m) in d.maxima.iter().enumerate() {
            assert_eq!(d.labels[m.pixel] as usize, id);
        }
    }

    #[test]
    fn monotone_ramp() {
        let g = field(6, 5, |x, y| x + 10.0 * y);
        let p = compute_persistence(&g).unwrap();
        assert_eq!(p.maxima.len(), 1);
        assert_eq!(p.maxima[0].persistence, 45.0);
    }

    /// 1D profile embedded in a strip: peaks 10 and 8 separated by a saddle
    /// at 5, minimum 1.
    fn two_peak_strip() -> ScalarGrid {
        let profile = [1.0, 4.0, 10.0, 6.0, 5.0, 6.5, 8.0, 3.0, 2.0];
        let d = Dims::planar(profile.len(), 1).unwrap();
        ScalarGrid::new(d, profile.iter().map(|&v| v as f32).collect()).unwrap()
    }

    #[test]
    fn elder_rule_on_two_peaks() {
        let p = compute_persistence(&two_peak_strip()).unwrap();
        let mut pers = p.persistences();
        pers.sort_by(f64::total_cmp);
        assert_eq!(pers, vec![3.0, 9.0]);
        let young = p.maxima.iter().find(|m| m.value == 8.0).unwrap();
        assert_eq!(young.saddle, Some(4));
        assert_eq!(p.maxima[young.merged_into.unwrap()].value, 10.0);
    }

    #[test]
    fn shift_invariance() {
        let g = field(9, 7, |x, y| libm::sin(x) * libm::cos(0.7 * y) + 0.1 * x);
        let shifted = g.map(|v| v + 3.0).unwrap();
        let a = compute_persistence(&g).unwrap().persistences();
        let b = compute_persistence(&shifted).unwrap().persistences();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn simplification_extremes() {
        let mc = MorseComplex::compute(&field(12, 12, |x, y| libm::sin(1.3 * x) * libm::sin(0.9 * y))).unwrap();
        assert!(mc.maxima_count() > 2);
        assert_eq!(mc.simplify(0.0).unwrap().destinations, mc.destinations);
        let top = mc.pairing.maxima[mc.pairing.global].persistence;
        let all = mc.simplify(top + 1.0).unwrap();
        assert_eq!(all.maxima_count(), 1);
        assert!(all.destinations.labels.iter().all(|&l| l == 0));
        assert!(mc.simplify(-1.0).is_err());
    }

    #[test]
    fn two_bumps_threshold_between_persistences() {
        let g = two_peak_strip();
        let mc = MorseComplex::compute(&g).unwrap();
        assert_eq!(mc.simplify(2.0).unwrap().maxima_count(), 2);
        let s = mc.simplify(4.0).unwrap();
        assert_eq!(s.maxima_count(), 1);
        assert_eq!(s.destinations.maxima[0].value, 10.0);
    }

    #[test]
    fn graph_shape() {
        let g = PersistenceGraph::new(9.0, [3.0, 0.5, 3.0]);
        assert_eq!(g.total(), 4);
        assert_eq!(g.count_at(0.0), 4);
        assert_eq!(g.count_at(0.5), 4);
        assert_eq!(g.count_at(0.6), 3);
        assert_eq!(g.count_at(3.1), 1);
        assert_eq!(g.count_at(100.0), 1);
        assert_eq!(g.rows(), vec![(0.0, 4), (0.5, 3), (3.0, 1), (9.0, 1)]);
    }

    #[test]
    fn selection_on_identical_members() {
        let g = PersistenceGraph::new(9.0, [3.0, 1.0]);
        let s = select_scale(&[g.clone(), g.clone(), g], 1.0).unwrap();
        assert_eq!((s.threshold, s.count, s.fraction), (0.0, 3, 1.0));
    }

    #[test]
    fn selection_reports_best_fraction() {
        let a = PersistenceGraph::new(9.0, [1.0]);
        let b = PersistenceGraph::new(9.0, [1.0, 2.0]);
        let c = PersistenceGraph::new(9.0, [1.0, 2.0, 3.0]);
        match select_scale(&[a, b, c], 0.9) {
            Err(Error::Selection { best_fraction }) => assert!((best_fraction - 1.0 / 3.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(select_scale(&[], 0.5).is_err());
        assert!(select_scale(&[PersistenceGraph::new(1.0, [])], 0.0).is_err());
    }

    #[test]
    fn half_plane_boundary_band() {
        let labels: Vec<u32> = (0..6 * 4).map(|p| if p % 6 < 3 { 0 } else { 1 }).collect();
        let mask = partition_boundaries(6, 4, &labels);
        for p in 0..24 {
            assert_eq!(mask[p], p % 6 == 2 || p % 6 == 3);
        }
    }

    #[test]
    fn rejects_3d() {
        let g = ScalarGrid::new(Dims::new(2, 2, 2).unwrap(), vec![0.0; 8]).unwrap();
        assert!(compute_destinations(&g).is_err());
    }
}
