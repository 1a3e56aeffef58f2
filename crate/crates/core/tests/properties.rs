//! Invariants over randomly generated inputs.

use eddyscope_core::features::{LabelOptions, MorseEnsemble, Scale};
use eddyscope_core::grid::{velocity_magnitude, Dims, Ensemble, ScalarGrid, VectorGrid};
use eddyscope_core::labeling::{label_kmeans, maxima_positions, Strategy as Labeling};
use eddyscope_core::morse::*;
use eddyscope_core::noise::*;
use eddyscope_core::pmap::{ProbabilisticMap, PALETTE};
use eddyscope_core::synth::{synth_eddy_ensemble, SynthParams};
use eddyscope_core::tf::{ControlPoint, TransferFunction};
use proptest::prelude::*;

fn grid_strategy(max: usize, levels: i32) -> impl Strategy<Value = ScalarGrid> {
    (2..=max, 2..=max).prop_flat_map(move |(nx, ny)| {
        prop::collection::vec(0..levels, nx * ny).prop_map(move |v| {
            ScalarGrid::new(Dims::planar(nx, ny).unwrap(), v.into_iter().map(|x| x as f32).collect()).unwrap()
        })
    })
}

fn tf_strategy() -> impl Strategy<Value = TransferFunction> {
    prop::collection::vec((0.0f64..1.0, prop::array::uniform4(0.0f64..=1.0)), 2..6).prop_filter_map(
        "distinct control points",
        |mut pts| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            let pts: Vec<ControlPoint> =
                pts.into_iter().map(|(s, c)| ControlPoint::new(s, c[0], c[1], c[2], c[3])).collect();
            TransferFunction::new(pts).ok()
        },
    )
}

/// Partition of pixels as the owning maximum's pixel.
fn partition(d: &DestinationMap) -> Vec<usize> {
    d.labels.iter().map(|&l| d.maxima[l as usize].pixel).collect()
}

/// Small planar ensemble from unconstrained values (plateaus included).
fn planar_ensemble() -> impl Strategy<Value = Ensemble> {
    (1..5usize, 3..9usize, 3..9usize).prop_flat_map(|(m, nx, ny)| {
        prop::collection::vec(prop::collection::vec(0..6i32, nx * ny), m).prop_map(move |members| {
            let grids = members
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    ScalarGrid::new(Dims::planar(nx, ny).unwrap(), v.into_iter().map(|x| x as f32).collect())
                        .unwrap()
                        .with_meta("f", 0, i as u32)
                })
                .collect();
            Ensemble::new(grids).unwrap()
        })
    })
}

fn kmeans_map(me: &MorseEnsemble, seed: u64) -> ProbabilisticMap {
    let total: usize = me.maxima_counts().iter().sum();
    let k = (total / me.len()).clamp(1, total);
    let a = me.label(Labeling::KMeans, &LabelOptions { k: Some(k), seed, min_level: None }).unwrap();
    me.probabilistic_map(&a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn destinations_partition_the_domain(g in grid_strategy(10, 5)) {
        let d = compute_destinations(&g).unwrap();
        prop_assert_eq!(d.labels.len(), g.values().len());
        for (i, m) in d.maxima.iter().enumerate() {
            prop_assert_eq!(d.labels[m.pixel] as usize, i);
        }
        prop_assert!(d.labels.iter().all(|&l| (l as usize) < d.maxima.len()));
        prop_assert_eq!(d.cell_sizes().iter().sum::<usize>(), g.values().len());
    }

    #[test]
    fn persistence_pairing_is_well_formed(g in grid_strategy(10, 7)) {
        let p = compute_persistence(&g).unwrap();
        prop_assert!(p.persistences().iter().all(|&x| x >= 0.0));
        prop_assert_eq!(p.maxima.iter().filter(|m| m.saddle.is_none()).count(), 1);
        let (lo, hi) = g.min_max();
        prop_assert_eq!(p.maxima[p.global].persistence, hi as f64 - lo as f64);
    }

    #[test]
    fn persistence_graph_shape(g in grid_strategy(10, 7)) {
        let graph = MorseComplex::compute(&g).unwrap().graph();
        prop_assert_eq!(graph.count_at(0.0), graph.total());
        prop_assert_eq!(graph.count_at(graph.global_persistence() + 1.0), 1);
        let rows = graph.rows();
        prop_assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1 && w[0].0 <= w[1].0));
        let mut t = 0.0;
        let mut last = usize::MAX;
        while t < graph.global_persistence() + 2.0 {
            let c = graph.count_at(t);
            prop_assert!(c <= last);
            last = c;
            t += 0.25;
        }
    }

    #[test]
    fn simplification_coarsens_idempotently(g in grid_strategy(9, 8), a in 0.0f64..8.0, b in 0.0f64..8.0) {
        let (t1, t2) = (a.min(b), a.max(b));
        let mc = MorseComplex::compute(&g).unwrap();
        let twice = mc.simplify(t1).unwrap().simplify(t2).unwrap();
        let once = mc.simplify(t2).unwrap();
        prop_assert_eq!(partition(&twice.destinations), partition(&once.destinations));
        prop_assert_eq!(once.maxima_count(), mc.graph().count_at(t2));
        prop_assert_eq!(mc.simplify(0.0).unwrap().destinations, mc.destinations);
    }

    #[test]
    fn probabilistic_map_invariants(e in planar_ensemble(), seed in 0u64..1000) {
        let me = MorseEnsemble::build(&e, Scale::Fixed(1.5)).unwrap();
        let pm = kmeans_map(&me, seed);
        let m = e.len() as f64;
        let lmax = (pm.label_count() as f64).log2();
        let n = pm.width() * pm.height();
        for p in 0..n {
            let probs = pm.probabilities_at(p);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for &v in &probs {
                prop_assert!(v >= 0.0 && (v * m - (v * m).round()).abs() < 1e-9);
            }
            let h = pm.entropy(p);
            prop_assert!(h >= 0.0 && h <= lmax + 1e-12);
            prop_assert_eq!(h == 0.0, probs.iter().any(|&v| v == 1.0));
            // blend lies inside the hull of the contributing colors
            let c = pm.blend_color(p, &PALETTE);
            for k in 0..3 {
                let used = probs.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(l, _)| PALETTE[l][k]);
                let (lo, hi) = used.fold((255u8, 0u8), |(lo, hi), x| (lo.min(x), hi.max(x)));
                prop_assert!(c[k] >= lo && c[k] <= hi);
            }
        }
        let taus = [0.0, 0.8, 1.0, 1.25, 1.5, 3.0];
        let masks: Vec<Vec<bool>> = taus.iter().map(|&t| pm.entropy_mask(t).unwrap()).collect();
        for w in masks.windows(2) {
            prop_assert!(w[1].iter().zip(&w[0]).all(|(&hi, &lo)| !hi || lo));
        }
        prop_assert!(masks[0].iter().all(|&b| b));
        let alphas = [0.1, 0.6, 0.7, 0.8, 1.0];
        let agree: Vec<Vec<bool>> = alphas.iter().map(|&a| pm.agreement_mask(a).unwrap()).collect();
        for w in agree.windows(2) {
            prop_assert!(w[1].iter().zip(&w[0]).all(|(&hi, &lo)| !hi || lo));
        }
        let certain: Vec<bool> = pm.entropy_map().iter().map(|&h| h == 0.0).collect();
        prop_assert_eq!(&agree[4], &certain);
    }

    #[test]
    fn labels_are_permutation_covariant(e in planar_ensemble(), rot in 0usize..4, seed in 0u64..100) {
        let members = e.members().to_vec();
        let mut shuffled = members.clone();
        shuffled.rotate_left(rot % members.len());
        shuffled.reverse();
        let f = Ensemble::new(shuffled).unwrap();
        let (a, b) = (MorseEnsemble::build(&e, Scale::Fixed(1.5)).unwrap(), MorseEnsemble::build(&f, Scale::Fixed(1.5)).unwrap());
        prop_assert_eq!(kmeans_map(&a, seed), kmeans_map(&b, seed));
        let opts = LabelOptions::default();
        for s in [Labeling::MorseMapping, Labeling::NearestMandatory] {
            let (la, lb) = (a.label(s, &opts), b.label(s, &opts));
            match (la, lb) {
                (Ok(la), Ok(lb)) => prop_assert_eq!(a.probabilistic_map(&la).unwrap(), b.probabilistic_map(&lb).unwrap()),
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x.is_ok(), y.is_ok()),
            }
        }
    }

    #[test]
    fn kmeans_labels_every_maximum(points in prop::collection::vec(prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 1..8), 1..5), k in 1usize..6, seed in 0u64..50) {
        let members: Vec<Vec<[f64; 2]>> = points.iter().map(|m| m.iter().map(|&(x, y)| [x, y]).collect()).collect();
        let total: usize = members.iter().map(Vec::len).sum();
        let r = label_kmeans(&members, k, seed);
        if k > total {
            prop_assert!(r.is_err());
        } else {
            let a = r.unwrap();
            prop_assert_eq!(a.label_count(), k);
            for (m, l) in members.iter().zip(&a.labels) {
                prop_assert_eq!(m.len(), l.len());
                prop_assert!(l.iter().all(|&x| (x as usize) < k));
            }
        }
    }

    #[test]
    fn degenerate_fits_classify_at_the_value(v in -5.0f32..5.0, members in 4usize..9, tf in tf_strategy()) {
        let grids = (0..members)
            .map(|i| ScalarGrid::new(Dims::new(2, 1, 1).unwrap(), vec![v, v]).unwrap().with_meta("f", 0, i as u32))
            .collect();
        let e = Ensemble::new(grids).unwrap();
        for kind in ModelKind::ALL {
            let s = FitOptions::default().fit(kind, &e).unwrap();
            prop_assert_eq!(expected_tf(&s.voxel(0), &tf), tf.eval(v as f64), "{:?}", kind);
        }
    }

    #[test]
    fn interpolated_quantiles_stay_sorted(a in prop::collection::vec(-10.0f32..10.0, 16), b in prop::collection::vec(-10.0f32..10.0, 16), x in 0.0f64..=1.0) {
        let (mut a, mut b) = (a, b);
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        let planes: Vec<Vec<f32>> = (0..16).map(|i| vec![a[i], b[i]]).collect();
        let s = DistributionSummary::from_planes(SummaryKind::Quantile { levels: 16 }, Dims::new(2, 1, 1).unwrap(), [1.0; 3], &planes).unwrap();
        match s.interpolate([x, 0.0, 0.0]).unwrap() {
            PointDistribution::Quantile(q) => prop_assert!(q.windows(2).all(|w| w[0] <= w[1])),
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn gmm_weights_sum_to_one(samples in prop::collection::vec(-100.0f64..100.0, 4..40)) {
        let fit = fit_gmm(&samples, &EmConfig::default()).unwrap();
        let w: f64 = fit.components.iter().map(|c| c.weight).sum();
        prop_assert!((w - 1.0).abs() <= 1e-9);
        prop_assert!(fit.components.iter().all(|c| c.weight >= 0.0 && c.variance >= 0.0));
        prop_assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)));
    }

    #[test]
    fn quartiles_tile_the_sample_range(members in prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 3), 4..12)) {
        let grids = members
            .iter()
            .enumerate()
            .map(|(i, v)| ScalarGrid::new(Dims::new(3, 1, 1).unwrap(), v.clone()).unwrap().with_meta("f", 0, i as u32))
            .collect();
        let e = Ensemble::new(grids).unwrap();
        let cuts = quartile_split(&e).unwrap();
        for v in 0..3 {
            let r: Vec<(f64, f64)> = cuts.iter().map(|s| match s.voxel(v) {
                PointDistribution::Uniform { lo, hi } => (lo, hi),
                _ => unreachable!(),
            }).collect();
            let lo = members.iter().map(|m| m[v]).fold(f32::INFINITY, f32::min) as f64;
            let hi = members.iter().map(|m| m[v]).fold(f32::NEG_INFINITY, f32::max) as f64;
            prop_assert_eq!(r[0].0, lo);
            prop_assert_eq!(r[2].1, hi);
            prop_assert!(r[0].1 == r[1].0 && r[1].1 == r[2].0);
            prop_assert!(r.iter().all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn velocity_magnitude_is_nonnegative(u in prop::collection::vec(-1e3f32..1e3, 8), v in prop::collection::vec(-1e3f32..1e3, 8), w in prop::collection::vec(-1e3f32..1e3, 8)) {
        let dims = Dims::new(2, 2, 2).unwrap();
        let g = |x: Vec<f32>| ScalarGrid::new(dims, x).unwrap();
        let m = velocity_magnitude(&VectorGrid::new(g(u.clone()), g(v.clone()), g(w.clone())).unwrap()).unwrap();
        for i in 0..8 {
            let want = ((u[i] as f64).powi(2) + (v[i] as f64).powi(2) + (w[i] as f64).powi(2)).sqrt() as f32;
            prop_assert!(m.values()[i] >= 0.0);
            prop_assert_eq!(m.values()[i], want);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthesis_is_a_pure_function(seed in 0u64..1000, members in 1usize..4, jitter in 0.0f64..0.5, t in 0u32..50) {
        let p = SynthParams::new(seed, members, Dims::new(16, 12, 2).unwrap(), 3, jitter).at_time(t, 0.3);
        let (a, b) = (synth_eddy_ensemble(&p).unwrap(), synth_eddy_ensemble(&p).unwrap());
        for (x, y) in a.ensemble.members().iter().zip(b.ensemble.members()) {
            prop_assert_eq!(x.values(), y.values());
        }
        let positions = maxima_positions(&compute_destinations(&a.ensemble.members()[0].slice_z(0).unwrap()).unwrap());
        prop_assert!(!positions.is_empty());
    }
}
