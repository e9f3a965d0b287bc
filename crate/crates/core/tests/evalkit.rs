use std::collections::HashSet;

use marginmine::evalkit::{plant_corpus, score, sweep_threshold, threshold_grid};
use marginmine::miner::MinedPair;
use proptest::prelude::*;

#[test]
fn f1_curve_peaks_inside_the_sweep() {
    let corpus = plant_corpus(2000, 2000, 64, 0.15, 1).unwrap();
    let grid = threshold_grid(1.0, 2.0, 41);
    let reports = sweep_threshold(&corpus, &grid, 16).unwrap();
    let best = reports.iter().map(|r| r.f1).fold(0.0, f64::max);
    assert!(reports[0].f1 < best && reports[reports.len() - 1].f1 < best);
    assert!(reports.windows(2).all(|w| w[0].accepted >= w[1].accepted));
    let peak = reports.iter().position(|r| r.f1 == best).unwrap();
    // no second rise after the curve has clearly dropped
    let after = &reports[peak..];
    assert!(after.windows(2).all(|w| w[1].f1 <= w[0].f1 + 0.01));
}

fn pairs(ids: &[(u64, u64)]) -> Vec<MinedPair> {
    ids.iter().map(|&(src_id, tgt_id)| MinedPair { margin: 1.5, src_id, tgt_id }).collect()
}

proptest! {
    #[test]
    fn score_matches_counted_intersection(
        mined in prop::collection::vec((0u64..30, 0u64..30), 0..60),
        gold in prop::collection::vec((0u64..30, 0u64..30), 0..60),
        seed in any::<u64>(),
    ) {
        let m: HashSet<_> = mined.iter().copied().collect();
        let g: HashSet<_> = gold.iter().copied().collect();
        let mut hits = 0usize;
        for p in &m {
            if g.contains(p) {
                hits += 1;
            }
        }
        let r = score(&pairs(&mined), &gold, 1.0);
        let p = if m.is_empty() { 1.0 } else { hits as f64 / m.len() as f64 };
        let rc = if g.is_empty() { 1.0 } else { hits as f64 / g.len() as f64 };
        prop_assert!((r.precision - p).abs() < 1e-12);
        prop_assert!((r.recall - rc).abs() < 1e-12);
        prop_assert_eq!(r.accepted, m.len() as u64);
        prop_assert!((0.0..=1.0).contains(&r.f1));

        // permuting either input changes nothing
        let mut shuffled = mined.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_mul(i + 7) % n.max(1));
        }
        let mut gold_rev = gold.clone();
        gold_rev.reverse();
        prop_assert_eq!(score(&pairs(&shuffled), &gold_rev, 1.0), r);
    }
}
