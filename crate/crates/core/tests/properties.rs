use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use volsrp::localize::refine_points;
use volsrp::tables::{predict_ops_rvsrp, refine_point_count};
use volsrp::*;

const C: f64 = 340.0;

fn point() -> impl Strategy<Value = Point> {
    (-3.0..3.0f64, -3.0..3.0f64, -1.0..2.0f64).prop_map(|(x, y, z)| [x, y, z])
}

fn array(max_mics: usize) -> impl Strategy<Value = MicArray> {
    prop::collection::vec(point(), 2..=max_mics).prop_filter_map("coincident microphones", |m| MicArray::new(m).ok())
}

fn region(flat: bool) -> impl Strategy<Value = SearchRegion> {
    (point(), 0.2..0.6f64, 0.2..0.6f64, 0.2..0.4f64).prop_map(move |(o, ex, ey, ez)| {
        SearchRegion::new([o[0], o[1] + 4.0, o[2]], [ex, ey, if flat { 0.0 } else { ez }]).unwrap()
    })
}

fn corr_for(array: &MicArray, fs: f64, seed: u64) -> CorrelationSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let max_lag = array.max_lag(fs, C) as usize + 2;
    let pairs = (0..array.pair_count()).map(|_| (0..2 * max_lag + 1).map(|_| rng.gen_range(-1.0..1.0)).collect());
    CorrelationSet::from_pairs(max_lag, true, pairs.collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairs_are_lexicographic(m in array(12)) {
        let n = m.mic_count();
        prop_assert_eq!(m.pair_count(), n * (n - 1) / 2);
        let expected: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        prop_assert_eq!(m.pairs(), expected.as_slice());
    }

    #[test]
    fn tdoa_is_antisymmetric_and_bounded(x in point(), m1 in point(), m2 in point(), fs in 8_000.0..96_000.0f64) {
        let forward = tdoa_samples(&x, &m1, &m2, fs, C);
        prop_assert_eq!(tdoa_samples(&x, &m2, &m1, fs, C), -forward);
        let baseline = volsrp::geometry::distance(&m1, &m2);
        prop_assert!(forward.abs() <= (baseline * fs / C).round() as i32);
    }

    #[test]
    fn doubling_alpha_nests_lag_sets(m in array(5), r in region(true), spacing in 0.02..0.05f64, alpha in 2usize..4) {
        let fs = 16_000.0;
        let edge = spacing * alpha as f64;
        prop_assume!(r.extents[0] >= 2.0 * edge && r.extents[1] >= 2.0 * edge);
        let small = VolumetricGrid::new(r, edge, alpha).unwrap();
        let big = VolumetricGrid::new(r, 2.0 * edge, 2 * alpha).unwrap();
        let small_sets = VolumeLagSets::from_geometry(&small, &m, fs, C, Exec::Sequential).unwrap();
        let big_sets = VolumeLagSets::from_geometry(&big, &m, fs, C, Exec::Sequential).unwrap();
        let owner: HashMap<usize, usize> = small
            .volumes()
            .iter()
            .enumerate()
            .flat_map(|(v, vol)| vol.members.iter().map(move |&i| (i, v)))
            .collect();
        for (bv, vol) in big.volumes().iter().enumerate() {
            for p in 0..m.pair_count() {
                let outer: BTreeSet<i16> = big_sets.set(bv, p).iter().copied().collect();
                for i in &vol.members {
                    let sv = owner[i];
                    prop_assert!(small_sets.set(sv, p).iter().all(|l| outer.contains(l)));
                }
            }
        }
        prop_assert!(mean_cardinality(&big_sets).unwrap() >= mean_cardinality(&small_sets).unwrap());
    }

    #[test]
    fn vsrp_ops_bounded_by_csrp_ratio(m in array(6), r in region(false), spacing in 0.03..0.06f64, alpha in 2usize..4) {
        let fs = 16_000.0;
        let vgrid = VolumetricGrid::new(r, spacing * alpha as f64, alpha).unwrap();
        let sets = VolumeLagSets::from_geometry(&vgrid, &m, fs, C, Exec::Sequential).unwrap();
        let p = m.pair_count() as f64;
        let z = mean_cardinality(&sets).unwrap();
        let ops = predict_ops_vsrp(&sets) as f64;
        let [l, w, h] = r.extents;
        let g = spacing;
        let a3 = (alpha as f64).powi(3);
        prop_assert!(ops < l * w * h / (a3 * g.powi(3)) * p * z + 1e-6);
        prop_assert!(ops < (l + g) * (w + g) * (h + g) / g.powi(3) * p * z / a3);
        prop_assert!(z <= a3);
    }

    #[test]
    fn refined_and_modified_counters_match(m in array(5), r in region(true), alpha in 2usize..5, seed in any::<u64>()) {
        let fs = 16_000.0;
        let edge = 0.04 * alpha as f64;
        prop_assume!(r.extents[0] >= edge && r.extents[1] >= edge);
        let vgrid = VolumetricGrid::new(r, edge, alpha).unwrap();
        let sets = VolumeLagSets::from_geometry(&vgrid, &m, fs, C, Exec::Sequential).unwrap();
        let corr = corr_for(&m, fs, seed);
        for boundary in [RefineBoundary::Closed, RefineBoundary::Open] {
            let refine = Refinement { array: &m, fs, c: C, spacing: 0.01, boundary };
            let est = rvsrp_localize(&corr, &sets, &vgrid, &refine, Exec::Sequential).unwrap();
            let predicted = predict_ops_rvsrp(&sets, edge, 0.01, 2, boundary);
            prop_assert_eq!(est.measured_additions, predicted);
            let volume = &vgrid.volumes()[est.element];
            prop_assert!(volume.contains_closed(&est.position, 1e-9));
            let lattice = refine_points(&volume.lo, r.active_axes(), edge, 0.01, boundary);
            prop_assert_eq!(lattice.len() as u64, refine_point_count(edge, 0.01, 2, boundary));
        }

        let grid = PointGrid::new(r, 0.05).unwrap();
        let search = ModifiedSearch::new(grid, &m, fs, C, 0.05, Exec::Sequential).unwrap();
        let est = search.localize(&corr, Exec::Sequential).unwrap();
        prop_assert_eq!(est.measured_additions, search.predicted_additions());
        let manual: u64 = (0..search.grid.len())
            .map(|x| {
                (0..m.pair_count())
                    .map(|p| {
                        let (lo, hi) = search.table.interval(p, x);
                        (hi - lo + 1) as u64
                    })
                    .sum::<u64>()
                    - 1
            })
            .sum();
        prop_assert_eq!(manual, search.predicted_additions());
    }

    #[test]
    fn parallel_matches_sequential(m in array(6), r in region(false), seed in any::<u64>()) {
        let fs = 16_000.0;
        let grid = PointGrid::new(r, 0.04).unwrap();
        let search = PointSearch::new(grid, &m, fs, C, Exec::Parallel).unwrap();
        let corr = corr_for(&m, fs, seed);
        let a = search.localize(&corr, Exec::Sequential).unwrap();
        let b = search.localize(&corr, Exec::Parallel).unwrap();
        prop_assert_eq!(a.element, b.element);
        prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
        prop_assert_eq!(a.measured_additions, b.measured_additions);
    }
}
