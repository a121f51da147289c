mod common;

use market_states::io::{read_matrix_csv, write_matrix_csv};
use market_states::states::{permute, sector_ordering};
use market_states::{
    average_matrix, build_tree, coefficient_histogram, cut_to_states, kmeans_bisect, pearson_matrix, zeta,
    ClusterConfig, CorrelationWindow, Sector, SectorMap,
};
use proptest::prelude::*;

use common::*;

fn window_from(k: usize, t: usize, seed: u64, day: i64) -> CorrelationWindow {
    let mut w = pearson_matrix(&random_panel(k, t, seed), 0..t).unwrap();
    let stamp = start() + chrono::Duration::days(day);
    w.label_date = stamp;
    w.window_start = stamp;
    w.window_end = stamp;
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pearson_agrees_with_two_pass(k in 2usize..12, t in 3usize..60, seed in any::<u64>()) {
        let panel = random_panel(k, t, seed);
        let fast = pearson_matrix(&panel, 0..t).unwrap();
        let slow = two_pass_correlation(&panel, 0..t);
        for (a, b) in fast.values.iter().zip(slow.iter()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zeta_matches_oracle_and_is_a_metric(k in 2usize..15, seeds in any::<[u64; 3]>()) {
        let [a, b, c] = seeds.map(|s| window_from(k, 30, s, 0));
        let ab = zeta(&a, &b).unwrap();
        prop_assert!((ab - zeta_oracle(&a.values, &b.values)).abs() <= 1e-15);
        prop_assert_eq!(ab, zeta(&b, &a).unwrap());
        prop_assert!(zeta(&a, &c).unwrap() <= ab + zeta(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn converged_bisection_assigns_to_nearest_center(n in 3usize..10, seed in any::<u64>()) {
        let windows: Vec<CorrelationWindow> =
            (0..n).map(|i| window_from(6, 20, seed.wrapping_add(i as u64), i as i64)).collect();
        let refs: Vec<&CorrelationWindow> = windows.iter().collect();
        let split = kmeans_bisect(&refs, &ClusterConfig::default()).unwrap();
        prop_assert!(!split.left.is_empty() && !split.right.is_empty());
        let mut all: Vec<usize> = split.left.iter().chain(&split.right).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        if split.converged && !split.degenerate {
            let center = |side: &[usize]| {
                let members: Vec<&CorrelationWindow> = side.iter().map(|&i| &windows[i]).collect();
                average_matrix(&members).unwrap()
            };
            let (cl, cr) = (center(&split.left), center(&split.right));
            for &i in &split.left {
                prop_assert!(zeta(&windows[i], &cl).unwrap() <= zeta(&windows[i], &cr).unwrap() + 1e-12);
            }
            for &i in &split.right {
                prop_assert!(zeta(&windows[i], &cr).unwrap() <= zeta(&windows[i], &cl).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn cut_is_monotone_and_partitions(n in 2usize..12, seed in any::<u64>(), mut thresholds in prop::collection::vec(0.0f64..0.5, 2..6)) {
        let windows: Vec<CorrelationWindow> =
            (0..n).map(|i| window_from(5, 15, seed ^ (i as u64 * 7919), i as i64)).collect();
        let mut tree = build_tree(&windows, &ClusterConfig::with_threshold(0.0)).unwrap();
        prop_assert_eq!(tree.root.leaf_count(), n);
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut last = usize::MAX;
        for t in thresholds {
            let cut = cut_to_states(&mut tree, t);
            prop_assert!(cut.n_states() <= last);
            last = cut.n_states();
            prop_assert_eq!(cut.assignment.len(), n);
            let total: usize = cut.states.iter().map(Vec::len).sum();
            prop_assert_eq!(total, n);
            prop_assert!(cut.assignment.iter().all(|&s| s >= 1 && s <= cut.n_states()));
        }
    }

    #[test]
    fn sector_sort_preserves_distances(k in 2usize..12, seeds in any::<[u64; 2]>(), picks in prop::collection::vec(0usize..10, 12)) {
        let [a, b] = seeds.map(|s| window_from(k, 25, s, 0));
        let map: SectorMap = a.symbols.iter().zip(&picks).map(|(s, &p)| (s.clone(), Sector::ALL[p])).collect();
        let ordering = sector_ordering(&a.symbols, &map).unwrap();
        let (pa, pb) = (permute(&a, &ordering.permutation), permute(&b, &ordering.permutation));
        prop_assert!((zeta(&pa, &pb).unwrap() - zeta(&a, &b).unwrap()).abs() <= 1e-15);
        prop_assert_eq!(ordering.blocks.iter().map(|b| b.range.len()).sum::<usize>(), k);
    }

    #[test]
    fn histogram_counts_every_pair(k in 2usize..20, bins in 1usize..60, seed in any::<u64>()) {
        let w = window_from(k, 30, seed, 0);
        let h = coefficient_histogram(&w, bins, false, "w").unwrap();
        prop_assert_eq!(h.total(), (k * (k - 1) / 2) as u64);
        let d = coefficient_histogram(&w, bins, true, "w").unwrap();
        prop_assert_eq!(d.total(), (k * (k + 1) / 2) as u64);
    }

    #[test]
    fn matrix_csv_round_trip_is_bit_exact(k in 1usize..10, seed in any::<u64>()) {
        let w = window_from(k.max(2), 12, seed, 0);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &w.symbols, &w.values).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.labels, w.symbols);
        for (a, b) in back.values.iter().zip(w.values.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
