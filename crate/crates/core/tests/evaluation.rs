//! Matching, calibration and retention properties.

use peakforge::evaluation::solve_assignment;
use peakforge::{calibration_curve, hungarian_match, retention_curve, GridPoint};
use peakforge_oracles::brute_force_assignment_cost;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(max: usize) -> impl Strategy<Value = Vec<GridPoint>> {
    prop::collection::vec(prop::array::uniform3(0.0f64..20.0), 0..=max)
        .prop_map(|v| v.into_iter().map(GridPoint::from).collect())
}

fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    solve_assignment(cost)
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|j| cost[i][j]))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn assignment_is_optimal(
        rows in 1usize..=6,
        cols in 1usize..=6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let a = solve_assignment(&cost);
        let used: Vec<usize> = a.iter().flatten().copied().collect();
        prop_assert_eq!(used.len(), rows.min(cols));
        let mut dedup = used.clone();
        dedup.sort();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), used.len());
        let best = brute_force_assignment_cost(&cost);
        prop_assert!((assignment_cost(&cost) - best).abs() < 1e-9);
    }

    #[test]
    fn matching_is_symmetric(pred in points(6), gt in points(6)) {
        let forward = hungarian_match(&pred, &gt, 6.0).unwrap();
        let backward = hungarian_match(&gt, &pred, 6.0).unwrap();
        prop_assert_eq!(forward.tp(), backward.tp());
        let total = |r: &peakforge::MatchReport| r.matches.iter().map(|m| m.distance).sum::<f64>();
        prop_assert!((total(&forward) - total(&backward)).abs() < 1e-9);
        prop_assert_eq!(forward.false_positives.len(), backward.false_negatives.len());
    }

    #[test]
    fn matching_ignores_translation(pred in points(6), gt in points(6), shift in prop::array::uniform3(-50.0f64..50.0)) {
        let moved = |v: &[GridPoint]| v.iter().map(|p| p.translated(&shift)).collect::<Vec<_>>();
        let a = hungarian_match(&pred, &gt, 6.0).unwrap();
        let b = hungarian_match(&moved(&pred), &moved(&gt), 6.0).unwrap();
        prop_assert_eq!(a.tp(), b.tp());
        let total = |r: &peakforge::MatchReport| r.matches.iter().map(|m| m.distance).sum::<f64>();
        prop_assert!((total(&a) - total(&b)).abs() < 1e-6);
    }

    #[test]
    fn identical_sets_match_exactly(gt in points(8)) {
        let report = hungarian_match(&gt, &gt, 1e-9).unwrap();
        prop_assert_eq!(report.tp(), gt.len());
        prop_assert!(report.false_positives.is_empty() && report.false_negatives.is_empty());
        prop_assert!(report.matches.iter().all(|m| m.distance == 0.0));
    }

    #[test]
    fn ece_ignores_input_order(scored in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 0..200), seed in any::<u64>()) {
        let mut shuffled = scored.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = calibration_curve(&scored, 10).unwrap();
        let b = calibration_curve(&shuffled, 10).unwrap();
        prop_assert!((a.ece - b.ece).abs() < 1e-12);
        prop_assert_eq!(a.bins.iter().map(|b| b.count).collect::<Vec<_>>(), b.bins.iter().map(|b| b.count).collect::<Vec<_>>());
        prop_assert_eq!(a.bins.iter().map(|b| b.count).sum::<usize>(), scored.len());
    }

    #[test]
    fn full_retention_is_overall_accuracy(scored in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
        let curve = retention_curve(&scored).unwrap();
        let last = curve.last().unwrap();
        prop_assert_eq!(last.fraction, 1.0);
        let hits = scored.iter().filter(|s| s.1).count();
        prop_assert_eq!(last.accuracy, hits as f64 / scored.len() as f64);
    }
}

#[test]
fn hungarian_agrees_with_exhaustive_search_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (rows, cols) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(0.0..30.0)).collect())
            .collect();
        assert!((assignment_cost(&cost) - brute_force_assignment_cost(&cost)).abs() < 1e-9);
    }
}

#[test]
fn ground_truth_presence_probability_is_calibrated() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let qs = [0.2, 0.5, 0.9];
    let scored: Vec<(f64, bool)> = (0..10_000)
        .map(|i| {
            let q = qs[i % 3];
            (q, rng.random_bool(q))
        })
        .collect();
    let report = calibration_curve(&scored, 10).unwrap();
    assert_eq!(report.bins.len(), 3);
    assert!(report.ece <= 0.02, "ece {}", report.ece);
}
