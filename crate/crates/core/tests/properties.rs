use proptest::prelude::*;

use driftsim::{
    ads, build_graph, dtc, Estimator, Labeling, Stratum, Thresholds, TransitionCounts, UserGraph, WalkConfig,
};

fn labeling(n_items: usize, n_cat: usize) -> Labeling {
    let names = (0..n_cat).map(|c| format!("c{c}")).collect();
    Labeling::new(names, (0..n_items).map(|i| i % n_cat).collect()).unwrap()
}

/// Random transition counts over a small catalog, with the picks they imply.
fn counts_strategy(n_items: usize) -> impl Strategy<Value = (TransitionCounts, Vec<usize>)> {
    proptest::collection::vec((0..n_items, 0..n_items, 1u64..5), 1..40).prop_map(|edges| {
        let mut c = TransitionCounts::new();
        let mut picks = Vec::new();
        for (a, b, n) in edges {
            c.add_n(a, b, n);
            picks.extend([a, b]);
        }
        picks.sort_unstable();
        picks.dedup();
        (c, picks)
    })
}

fn exact() -> WalkConfig {
    WalkConfig {
        estimator: Estimator::Exact,
        ..WalkConfig::default()
    }
}

proptest! {
    #[test]
    fn binary_ads_lies_in_unit_interval((counts, picks) in counts_strategy(12), target in 0usize..2) {
        let l = labeling(12, 2);
        let g: UserGraph<f64> = build_graph(&counts, &picks, &l);
        let v = ads(&g, &l, target, &exact(), 0).unwrap().value;
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v), "{v}");
    }

    #[test]
    fn ads_is_bounded_by_category_count((counts, picks) in counts_strategy(15), target in 0usize..3) {
        let l = labeling(15, 3);
        let g: UserGraph<f64> = build_graph(&counts, &picks, &l);
        let v = ads(&g, &l, target, &exact(), 0).unwrap().value;
        prop_assert!((-2.0 - 1e-12..=1.0 + 1e-12).contains(&v), "{v}");
    }

    #[test]
    fn monte_carlo_stays_in_bounds((counts, picks) in counts_strategy(10), seed in 0u64..100) {
        let l = labeling(10, 2);
        let g: UserGraph<f64> = build_graph(&counts, &picks, &l);
        let cfg = WalkConfig { estimator: Estimator::MonteCarlo, num_walks: 200, seed, ..WalkConfig::default() };
        let r = ads(&g, &l, 1, &cfg, 0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r.value));
        prop_assert!(r.stderr >= 0.0);
    }

    #[test]
    fn non_dangling_rows_sum_to_one((counts, picks) in counts_strategy(20)) {
        let g: UserGraph<f64> = build_graph(&counts, &picks, &labeling(20, 2));
        for v in 0..g.num_nodes() {
            if !g.is_dangling(v) {
                let s: f64 = g.row(v).iter().map(|e| e.1).sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn dtc_is_strictly_inside_unit_interval(
        history in proptest::collection::btree_set(0usize..40, 1..20),
        simulated in proptest::collection::btree_set(0usize..40, 0..20),
    ) {
        let l = labeling(40, 2);
        let h: Vec<usize> = history.into_iter().collect();
        let s: Vec<usize> = simulated.into_iter().collect();
        let v = dtc(&h, &s, &l, 1).unwrap().value;
        prop_assert!(v > -1.0 && v < 1.0, "{v}");
        if s.is_empty() {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn dtc_vanishes_when_shares_match(hits in 0usize..6, misses in 0usize..6, scale in 1usize..4) {
        prop_assume!(hits + misses > 0);
        // odd items are the target; history and simulation are disjoint
        let l = labeling(400, 2);
        let pick = |offset: usize, n_hit: usize, n_miss: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..n_hit).map(|k| offset + 2 * k + 1).collect();
            v.extend((0..n_miss).map(|k| offset + 2 * k));
            v.sort_unstable();
            v
        };
        let h = pick(0, hits, misses);
        let s = pick(100, hits * scale, misses * scale);
        let v = dtc(&h, &s, &l, 1).unwrap().value;
        prop_assert!(v.abs() <= 1e-12, "{v}");
    }

    #[test]
    fn strata_follow_closed_outer_intervals(f in 0.0f64..=1.0) {
        let t = Thresholds::default();
        let s = t.classify(f);
        let expected = if f <= 0.2 {
            Stratum::NonRadicalized
        } else if f >= 0.8 {
            Stratum::Radicalized
        } else {
            Stratum::SemiRadicalized
        };
        prop_assert_eq!(s, expected);
    }
}

#[test]
fn interval_endpoints() {
    let t = Thresholds::default();
    assert_eq!(t.classify(0.2), Stratum::NonRadicalized);
    assert_eq!(t.classify(0.8), Stratum::Radicalized);
}
