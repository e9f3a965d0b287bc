//! Margin scoring and pair selection.
//!
//! A candidate `(x, y)` is scored by the ratio of its cosine to the average
//! similarity of the `k` nearest neighbors of both sides:
//!
//! ```text
//! margin(x, y) = cos(x, y) / ( sum_{z in NNk(x)} cos(x, z) / 2k
//!                            + sum_{z in NNk(y)} cos(y, z) / 2k )
//! ```
//!
//! Neighbor sums are accumulated in `f64` in list order; the margin is
//! evaluated in `f64` and stored as `f32`, which is also the precision of the
//! candidate files. Thresholds compare against that stored value.
//!
//! When only forward lists exist (one side too large to index as queries),
//! the forward term stands in for both halves of the denominator.

mod attach;
mod direction;
mod io;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::encoder::EmbeddingError;
use crate::vindex::IndexError;

pub use attach::{attach_text, write_bitext};
pub use direction::{compute_direction, merge_shard_lists};
pub use io::{
    read_candidates, read_neighbors, read_pairs, write_candidates, write_neighbors, write_pairs, CANDIDATE_MAGIC,
    NEIGHBOR_MAGIC,
};

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_THRESHOLD: f64 = 1.06;
/// Thresholds always reported in the stats sidecar.
pub const REPORT_THRESHOLDS: [f64; 4] = [1.0, 1.06, 1.07, 1.2];

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("{context}: {source}")]
    Search { context: String, source: IndexError },
    #[error("neighbor lists disagree on k: forward {forward}, backward {backward}")]
    KMismatch { forward: usize, backward: usize },
    #[error("expected {expected} neighbor lists, got {found}")]
    WrongDirection { expected: Direction, found: Direction },
    #[error("invalid neighbor list for query {query_id}: {reason}")]
    BadList { query_id: u64, reason: String },
    #[error("id {id} does not exist in the {lang} corpus")]
    DanglingId { id: u64, lang: String },
    #[error("invalid mining configuration: {0}")]
    Config(String),
    #[error("corrupt file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MinerError> = std::result::Result<T, E>;

/// Which side the queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Source sentences searched in the target index.
    Forward,
    /// Target sentences searched in the source index.
    Backward,
}

impl Direction {
    pub fn code(self) -> u8 {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Direction::Forward),
            1 => Some(Direction::Backward),
            _ => None,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query_id: u64,
    pub neighbor_ids: Vec<u64>,
    /// Descending, aligned with `neighbor_ids`.
    pub sims: Vec<f32>,
    pub direction: Direction,
}

impl NeighborList {
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |reason: &str| Err(MinerError::BadList { query_id: self.query_id, reason: reason.into() });
        if self.neighbor_ids.len() != self.sims.len() {
            return bad("ids and sims differ in length");
        }
        if self.sims.len() > k {
            return bad("longer than k");
        }
        if self.sims.windows(2).any(|w| !(w[0] >= w[1])) {
            return bad("similarities are not sorted descending");
        }
        let mut seen = HashSet::with_capacity(self.neighbor_ids.len());
        if !self.neighbor_ids.iter().all(|id| seen.insert(*id)) {
            return bad("repeated neighbor id");
        }
        Ok(())
    }

    /// Sum of the neighbor similarities, accumulated in list order.
    pub fn sim_sum(&self) -> f64 {
        self.sims.iter().map(|&s| s as f64).sum()
    }
}

/// All lists of one direction, computed with the same `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub k: usize,
    pub direction: Direction,
    pub lists: Vec<NeighborList>,
}

impl NeighborSet {
    pub fn new(k: usize, direction: Direction) -> Self {
        NeighborSet { k, direction, lists: Vec::new() }
    }

    fn sums(&self) -> HashMap<u64, f64> {
        self.lists.iter().map(|l| (l.query_id, l.sim_sum())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginCandidate {
    pub src_id: u64,
    pub tgt_id: u64,
    pub margin: f32,
    pub direction: Direction,
}

/// An accepted pair before its texts are attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinedPair {
    pub margin: f32,
    pub src_id: u64,
    pub tgt_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub margin: f32,
    pub src_id: u64,
    pub tgt_id: u64,
    pub src_text: String,
    pub tgt_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    MaxStrategy,
    ForwardOnly,
}

impl std::str::FromStr for MiningMode {
    type Err = MinerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-strategy" | "max" => Ok(MiningMode::MaxStrategy),
            "forward-only" | "fwd" => Ok(MiningMode::ForwardOnly),
            _ => Err(MinerError::Config(format!("unknown mode {s:?} (expected max-strategy or forward-only)"))),
        }
    }
}

impl std::fmt::Display for MiningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MiningMode::MaxStrategy => "max-strategy",
            MiningMode::ForwardOnly => "forward-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub k: usize,
    pub threshold: f64,
    pub mode: MiningMode,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { k: DEFAULT_K, threshold: DEFAULT_THRESHOLD, mode: MiningMode::MaxStrategy }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(MinerError::Config("k must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(MinerError::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Counters from margin scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginStats {
    pub forward_lists: u64,
    pub backward_lists: u64,
    /// Candidates kept, counting both directions.
    pub candidates: u64,
    /// Dropped because the denominator was not positive.
    pub dropped_denominator: u64,
    /// Dropped because the neighbor on the other side had no list.
    pub dropped_missing_list: u64,
    /// Dropped because the cosine, and hence the margin, was not positive.
    pub dropped_nonpositive: u64,
}

impl MarginStats {
    pub fn add(&mut self, o: &MarginStats) {
        self.forward_lists += o.forward_lists;
        self.backward_lists += o.backward_lists;
        self.candidates += o.candidates;
        self.dropped_denominator += o.dropped_denominator;
        self.dropped_missing_list += o.dropped_missing_list;
        self.dropped_nonpositive += o.dropped_nonpositive;
    }
}

/// Margin from a cosine and the two neighbor-similarity sums, or `None`
/// when the denominator is not positive.
pub fn margin_value(cos: f64, x_sum: f64, y_sum: f64, k: usize) -> Option<f64> {
    let two_k = 2.0 * k as f64;
    let denom = x_sum / two_k + y_sum / two_k;
    (denom > 0.0).then(|| cos / denom)
}

/// Forward-only margin: the forward term is used for both halves.
pub fn forward_only_margin(cos: f64, x_sum: f64, k: usize) -> Option<f64> {
    margin_value(cos, x_sum, x_sum, k)
}

fn push_candidate(
    out: &mut Vec<MarginCandidate>,
    stats: &mut MarginStats,
    cos: f32,
    margin: Option<f64>,
    src_id: u64,
    tgt_id: u64,
    direction: Direction,
) {
    match margin {
        None => stats.dropped_denominator += 1,
        Some(_) if cos <= 0.0 => stats.dropped_nonpositive += 1,
        Some(m) => {
            out.push(MarginCandidate { src_id, tgt_id, margin: m as f32, direction });
            stats.candidates += 1;
        }
    }
}

/// Score every neighbor pair of both directions.
///
/// Forward candidates come first in list order, then backward ones. A
/// candidate is dropped when the other side has no neighbor list of its own.
pub fn margin_scores(fwd: &NeighborSet, bwd: &NeighborSet) -> Result<(Vec<MarginCandidate>, MarginStats)> {
    if fwd.direction != Direction::Forward {
        return Err(MinerError::WrongDirection { expected: Direction::Forward, found: fwd.direction });
    }
    if bwd.direction != Direction::Backward {
        return Err(MinerError::WrongDirection { expected: Direction::Backward, found: bwd.direction });
    }
    if fwd.k != bwd.k {
        return Err(MinerError::KMismatch { forward: fwd.k, backward: bwd.k });
    }
    let k = fwd.k;
    let fwd_sums = fwd.sums();
    let bwd_sums = bwd.sums();
    let mut stats = MarginStats {
        forward_lists: fwd.lists.len() as u64,
        backward_lists: bwd.lists.len() as u64,
        ..Default::default()
    };
    let mut out = Vec::new();
    for (set, own, other) in [(fwd, &fwd_sums, &bwd_sums), (bwd, &bwd_sums, &fwd_sums)] {
        for l in &set.lists {
            let own_sum = own[&l.query_id];
            for (&nb, &cos) in l.neighbor_ids.iter().zip(&l.sims) {
                let Some(&other_sum) = other.get(&nb) else {
                    stats.dropped_missing_list += 1;
                    continue;
                };
                let (src, tgt, x_sum, y_sum) = match set.direction {
                    Direction::Forward => (l.query_id, nb, own_sum, other_sum),
                    Direction::Backward => (nb, l.query_id, other_sum, own_sum),
                };
                let m = margin_value(cos as f64, x_sum, y_sum, k);
                push_candidate(&mut out, &mut stats, cos, m, src, tgt, set.direction);
            }
        }
    }
    Ok((out, stats))
}

/// Score forward lists alone, for one target shard.
pub fn forward_only_scores(fwd: &NeighborSet) -> Result<(Vec<MarginCandidate>, MarginStats)> {
    if fwd.direction != Direction::Forward {
        return Err(MinerError::WrongDirection { expected: Direction::Forward, found: fwd.direction });
    }
    let mut stats = MarginStats { forward_lists: fwd.lists.len() as u64, ..Default::default() };
    let mut out = Vec::new();
    for l in &fwd.lists {
        let x_sum = l.sim_sum();
        for (&nb, &cos) in l.neighbor_ids.iter().zip(&l.sims) {
            let m = forward_only_margin(cos as f64, x_sum, fwd.k);
            push_candidate(&mut out, &mut stats, cos, m, l.query_id, nb, Direction::Forward);
        }
    }
    Ok((out, stats))
}

fn passes(margin: f32, threshold: f64) -> bool {
    margin as f64 >= threshold
}

/// Order used for greedy acceptance: margin descending, then `(src, tgt)`.
fn sort_for_greedy(pairs: &mut [MinedPair]) {
    pairs.sort_unstable_by(|a, b| {
        b.margin.total_cmp(&a.margin).then(a.src_id.cmp(&b.src_id)).then(a.tgt_id.cmp(&b.tgt_id))
    });
}

/// Union of candidates with duplicates of the same `(src, tgt)` collapsed to
/// their best margin, in greedy order.
pub fn rank_candidates(candidates: impl IntoIterator<Item = MarginCandidate>) -> Vec<MinedPair> {
    let mut best: HashMap<(u64, u64), f32> = HashMap::new();
    for c in candidates {
        best.entry((c.src_id, c.tgt_id)).and_modify(|m| *m = m.max(c.margin)).or_insert(c.margin);
    }
    let mut pairs: Vec<MinedPair> =
        best.into_iter().map(|((src_id, tgt_id), margin)| MinedPair { margin, src_id, tgt_id }).collect();
    sort_for_greedy(&mut pairs);
    pairs
}

/// Greedy 1:1 scan over ranked pairs at or above `threshold`.
pub fn greedy_accept(ranked: &[MinedPair], threshold: f64) -> Vec<MinedPair> {
    let mut used_src = HashSet::new();
    let mut used_tgt = HashSet::new();
    let mut out = Vec::new();
    for p in ranked.iter().take_while(|p| passes(p.margin, threshold)) {
        if !used_src.contains(&p.src_id) && !used_tgt.contains(&p.tgt_id) {
            used_src.insert(p.src_id);
            used_tgt.insert(p.tgt_id);
            out.push(*p);
        }
    }
    out
}

/// Max-strategy selection: union both directions, keep the best margin per
/// pair, drop pairs under the threshold, accept greedily with each source
/// and target used at most once. Output is in acceptance order.
pub fn max_strategy_select(candidates: impl IntoIterator<Item = MarginCandidate>, threshold: f64) -> Vec<MinedPair> {
    greedy_accept(&rank_candidates(candidates), threshold)
}

/// Select each shard on its own and concatenate in shard order. A source
/// may keep one translation per shard.
pub fn forward_only_select(shards: Vec<Vec<MarginCandidate>>, threshold: f64) -> Vec<MinedPair> {
    shards.into_iter().flat_map(|s| max_strategy_select(s, threshold)).collect()
}

/// Accepted count for each threshold, keyed by the threshold printed with
/// two decimals.
pub fn accepted_per_threshold(ranked_groups: &[Vec<MinedPair>], thresholds: &[f64]) -> BTreeMap<String, u64> {
    thresholds
        .iter()
        .map(|&t| {
            let n: usize = ranked_groups.iter().map(|g| greedy_accept(g, t).len()).sum();
            (format!("{t:.2}"), n as u64)
        })
        .collect()
}

/// Contents of the stats sidecar written next to mined pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub mode: MiningMode,
    pub k: usize,
    pub threshold: f64,
    pub margin: MarginStats,
    /// Distinct `(src, tgt)` pairs after collapsing duplicates.
    pub unique_candidates: u64,
    pub accepted: u64,
    pub accepted_per_threshold: BTreeMap<String, u64>,
}

impl MiningStats {
    pub fn new(config: &MiningConfig, margin: MarginStats, ranked_groups: &[Vec<MinedPair>], accepted: u64) -> Self {
        let mut thresholds = REPORT_THRESHOLDS.to_vec();
        thresholds.push(config.threshold);
        MiningStats {
            mode: config.mode,
            k: config.k,
            threshold: config.threshold,
            margin,
            unique_candidates: ranked_groups.iter().map(|g| g.len() as u64).sum(),
            accepted,
            accepted_per_threshold: accepted_per_threshold(ranked_groups, &thresholds),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Select from candidate groups according to `mode`: one group per target
/// shard in forward-only mode, everything pooled otherwise. Returns the
/// accepted pairs and the ranked groups for reporting.
pub fn select(groups: Vec<Vec<MarginCandidate>>, mode: MiningMode, threshold: f64) -> (Vec<MinedPair>, Vec<Vec<MinedPair>>) {
    let ranked: Vec<Vec<MinedPair>> = match mode {
        MiningMode::MaxStrategy => vec![rank_candidates(groups.into_iter().flatten())],
        MiningMode::ForwardOnly => groups.into_iter().map(rank_candidates).collect(),
    };
    let accepted = ranked.iter().flat_map(|g| greedy_accept(g, threshold)).collect();
    (accepted, ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(q: u64, ids: &[u64], sims: &[f32], d: Direction) -> NeighborList {
        NeighborList { query_id: q, neighbor_ids: ids.to_vec(), sims: sims.to_vec(), direction: d }
    }

    fn cand(s: u64, t: u64, m: f32) -> MarginCandidate {
        MarginCandidate { src_id: s, tgt_id: t, margin: m, direction: Direction::Forward }
    }

    fn ids(p: &[MinedPair]) -> Vec<(u64, u64)> {
        p.iter().map(|p| (p.src_id, p.tgt_id)).collect()
    }

    #[test]
    fn uniform_neighborhood_gives_one() {
        for c in [0.1, 0.5, 0.77, 1.0] {
            let k = 16;
            let m = margin_value(c, c * k as f64, c * k as f64, k).unwrap();
            assert!((m - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constructed_case_gives_two() {
        let fwd = NeighborSet { k: 2, direction: Direction::Forward, lists: vec![list(0, &[10, 11], &[0.8, 0.0], Direction::Forward)] };
        let bwd = NeighborSet { k: 2, direction: Direction::Backward, lists: vec![list(10, &[0, 1], &[0.8, 0.0], Direction::Backward)] };
        let x_sum = fwd.lists[0].sim_sum();
        let y_sum = bwd.lists[0].sim_sum();
        let m = margin_value(0.8f32 as f64, x_sum, y_sum, 2).unwrap();
        assert!((m - 2.0).abs() < 1e-9);
        let (c, stats) = margin_scores(&fwd, &bwd).unwrap();
        // (0,10) from both sides; 11 and 1 have no lists of their own
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| (c.src_id, c.tgt_id) == (0, 10) && c.margin == 2.0));
        assert_eq!(stats.dropped_missing_list, 2);
    }

    #[test]
    fn short_lists_still_divide_by_2k() {
        // one neighbor of sim 0.5 on each side, k = 4: denom = 0.5/8 + 0.5/8
        assert!((margin_value(0.5, 0.5, 0.5, 4).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_denominators_are_dropped() {
        let fwd = NeighborSet { k: 2, direction: Direction::Forward, lists: vec![list(0, &[5, 6], &[0.1, -0.4], Direction::Forward)] };
        let bwd = NeighborSet {
            k: 2,
            direction: Direction::Backward,
            lists: vec![list(5, &[0], &[0.1], Direction::Backward), list(6, &[0], &[-0.4], Direction::Backward)],
        };
        let (c, stats) = margin_scores(&fwd, &bwd).unwrap();
        assert!(c.is_empty());
        assert_eq!(stats.dropped_denominator, 4);
        let bad = NeighborSet { k: 3, ..bwd };
        assert!(matches!(margin_scores(&fwd, &bad), Err(MinerError::KMismatch { .. })));
    }

    #[test]
    fn greedy_hand_example() {
        let c = vec![cand(1, 1, 2.0), cand(1, 2, 1.5), cand(2, 2, 1.4)];
        let low = max_strategy_select(c.clone(), 1.0);
        assert_eq!(ids(&low), vec![(1, 1), (2, 2)]);
        let high = max_strategy_select(c, 1.45);
        assert_eq!(ids(&high), vec![(1, 1)]);
        assert!(max_strategy_select(Vec::new(), 1.0).is_empty());
    }

    #[test]
    fn duplicates_keep_max_and_ties_order_by_ids() {
        let c = vec![cand(3, 3, 1.2), cand(3, 3, 1.5), cand(2, 9, 1.5), cand(2, 8, 1.5)];
        let r = rank_candidates(c);
        assert_eq!(ids(&r), vec![(2, 8), (2, 9), (3, 3)]);
        assert_eq!(r[2].margin, 1.5);
    }

    #[test]
    fn forward_only_keeps_alternatives() {
        let shard_a = vec![cand(1, 10, 1.3)];
        let shard_b = vec![cand(1, 20, 1.2), cand(2, 20, 1.1)];
        let out = forward_only_select(vec![shard_a.clone(), shard_b], 1.0);
        assert_eq!(ids(&out), vec![(1, 10), (1, 20)]);
        assert_eq!(forward_only_select(vec![shard_a.clone()], 1.0), max_strategy_select(shard_a, 1.0));
    }

    #[test]
    fn list_validation() {
        let k = 3;
        assert!(list(0, &[1, 2], &[0.5, 0.4], Direction::Forward).validate(k).is_ok());
        assert!(list(0, &[1, 1], &[0.5, 0.4], Direction::Forward).validate(k).is_err());
        assert!(list(0, &[1, 2], &[0.4, 0.5], Direction::Forward).validate(k).is_err());
        assert!(list(0, &[1, 2, 3, 4], &[0.4; 4], Direction::Forward).validate(k).is_err());
    }

    fn arb_candidates() -> impl Strategy<Value = Vec<MarginCandidate>> {
        prop::collection::vec((0u64..30, 0u64..30, 0.5f32..2.5), 0..120)
            .prop_map(|v| v.into_iter().map(|(s, t, m)| cand(s, t, m)).collect())
    }

    proptest! {
        #[test]
        fn one_to_one_and_monotone(c in arb_candidates(), t1 in 0.5f64..2.0, dt in 0.0f64..1.0) {
            let a = max_strategy_select(c.clone(), t1);
            let b = max_strategy_select(c.clone(), t1 + dt);
            let src: HashSet<_> = a.iter().map(|p| p.src_id).collect();
            let tgt: HashSet<_> = a.iter().map(|p| p.tgt_id).collect();
            prop_assert_eq!(src.len(), a.len());
            prop_assert_eq!(tgt.len(), a.len());
            let sa: HashSet<_> = ids(&a).into_iter().collect();
            prop_assert!(ids(&b).iter().all(|p| sa.contains(p)));
            prop_assert!(a.iter().all(|p| p.margin as f64 >= t1));
        }

        #[test]
        fn best_candidate_always_accepted(c in arb_candidates()) {
            let r = rank_candidates(c.clone());
            let a = max_strategy_select(c, 0.1);
            prop_assert_eq!(r.first(), a.first());
        }

        #[test]
        fn filtering_before_or_after_greedy_agrees(c in arb_candidates(), t in 0.5f64..2.5) {
            let before = max_strategy_select(c.clone(), t);
            let after: Vec<_> = max_strategy_select(c, 0.0).into_iter().filter(|p| p.margin as f64 >= t).collect();
            prop_assert_eq!(before, after);
        }
    }
}
