//! Synthetic corpora with known alignments, precision/recall scoring and
//! threshold sweeps.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{BlockManifest, BlockWriter, CorpusError, Lang};
use crate::encoder::{embedding_path, write_embeddings, EmbeddingBlock, EmbeddingError};
use crate::miner::{
    compute_direction, greedy_accept, margin_scores, rank_candidates, Direction, MinedPair, MinerError, NeighborSet,
};
use crate::vindex::FlatIndex;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    Params(String),
    #[error("bad gold file {path}: {reason}")]
    Gold { path: String, reason: String },
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Two embedded corpora with a known 1:1 alignment between some rows.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub a: EmbeddingBlock,
    pub b: EmbeddingBlock,
    pub a_texts: Vec<String>,
    pub b_texts: Vec<String>,
    /// `(a_id, b_id)`, sorted by `a_id`.
    pub gold: Vec<(u64, u64)>,
    pub sigma: f64,
    pub distractors: usize,
}

fn unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn perturbed(u: &[f64], noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = u.iter().map(|&x| x + noise.map_or(0.0, |d| d.sample(rng))).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Plant `n_pairs` aligned pairs among `n_distractors` unrelated sentences
/// per side. Each pair shares a random unit vector `u`; the two sides are
/// `normalize(u + e)` with independent `e ~ N(0, sigma^2 I)`. Gold pairs and
/// distractors are shuffled into random positions on each side.
pub fn plant_corpus(n_pairs: usize, n_distractors: usize, dim: usize, sigma: f64, seed: u64) -> Result<PlantedCorpus> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(EvalError::Params(format!("sigma must be non-negative, got {sigma}")));
    }
    if dim == 0 {
        return Err(EvalError::Params("dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).unwrap());
    let n = n_pairs + n_distractors;
    let mut a_rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut b_rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut a_pos: Vec<usize> = (0..n).collect();
    let mut b_pos: Vec<usize> = (0..n).collect();
    a_pos.shuffle(&mut rng);
    b_pos.shuffle(&mut rng);
    let mut gold = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let u = unit(dim, &mut rng);
        a_rows[a_pos[i]] = Some(perturbed(&u, noise.as_ref(), &mut rng));
        b_rows[b_pos[i]] = Some(perturbed(&u, noise.as_ref(), &mut rng));
        gold.push((a_pos[i] as u64, b_pos[i] as u64));
    }
    for i in n_pairs..n {
        a_rows[a_pos[i]] = Some(unit(dim, &mut rng));
        b_rows[b_pos[i]] = Some(unit(dim, &mut rng));
    }
    gold.sort_unstable();
    let flat = |rows: Vec<Option<Vec<f64>>>| -> Vec<f32> { rows.into_iter().flat_map(|r| r.unwrap()).map(|x| x as f32).collect() };
    Ok(PlantedCorpus {
        a: EmbeddingBlock::normalized(dim, 0, flat(a_rows))?,
        b: EmbeddingBlock::normalized(dim, 0, flat(b_rows))?,
        a_texts: (0..n).map(|i| format!("planted a {i}")).collect(),
        b_texts: (0..n).map(|i| format!("planted b {i}")).collect(),
        gold,
        sigma,
        distractors: n_distractors,
    })
}

impl PlantedCorpus {
    /// Write both sides as prepared input: corpus blocks plus matching
    /// embedding files, `block_capacity` rows per block.
    pub fn write_prepared(&self, dir: &Path, a: &Lang, b: &Lang, block_capacity: u64) -> Result<(BlockManifest, BlockManifest)> {
        fs::create_dir_all(dir)?;
        let mut manifests = Vec::new();
        for (lang, block, texts) in [(a, &self.a, &self.a_texts), (b, &self.b, &self.b_texts)] {
            let mut w = BlockWriter::new(dir, lang.clone(), block_capacity);
            for t in texts {
                w.push(t.clone())?;
            }
            let manifest = w.finish()?;
            for entry in &manifest.blocks {
                let start = manifest.base_global_id(entry.index) as usize;
                let part = block.slice_rows(start, start + entry.count as usize);
                write_embeddings(&part, &embedding_path(dir, lang, entry.index))?;
            }
            manifests.push(manifest);
        }
        let b_manifest = manifests.pop().unwrap();
        Ok((manifests.pop().unwrap(), b_manifest))
    }
}

pub fn write_gold(gold: &[(u64, u64)], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (a, b) in gold {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_gold(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let bad = || EvalError::Gold { path: path.display().to_string(), reason: format!("line {}", n + 1) };
            let (a, b) = line.split_once('\t').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrReport {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accepted: u64,
}

/// Precision and recall of mined id pairs against gold. Both inputs are
/// treated as sets. An empty mined set has precision 1.
pub fn score(mined: &[MinedPair], gold: &[(u64, u64)], threshold: f64) -> PrReport {
    let gold: HashSet<(u64, u64)> = gold.iter().copied().collect();
    let mined: HashSet<(u64, u64)> = mined.iter().map(|p| (p.src_id, p.tgt_id)).collect();
    let hits = mined.intersection(&gold).count() as f64;
    let precision = if mined.is_empty() { 1.0 } else { hits / mined.len() as f64 };
    let recall = if gold.is_empty() { 1.0 } else { hits / gold.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    PrReport { threshold, precision, recall, f1, accepted: mined.len() as u64 }
}

/// Ranked max-strategy candidates of a planted corpus, with exact search.
pub fn mine_planted(corpus: &PlantedCorpus, k: usize) -> Result<Vec<MinedPair>> {
    let dim = corpus.a.dim();
    let a_index = FlatIndex::from_blocks(dim, [&corpus.a]).map_err(|e| MinerError::Search { context: "planted a".into(), source: e })?;
    let b_index = FlatIndex::from_blocks(dim, [&corpus.b]).map_err(|e| MinerError::Search { context: "planted b".into(), source: e })?;
    let fwd = NeighborSet { k, direction: Direction::Forward, lists: compute_direction(&corpus.a, &b_index, k, Direction::Forward, "planted fwd")? };
    let bwd = NeighborSet { k, direction: Direction::Backward, lists: compute_direction(&corpus.b, &a_index, k, Direction::Backward, "planted bwd")? };
    let (candidates, _) = margin_scores(&fwd, &bwd)?;
    Ok(rank_candidates(candidates))
}

/// One report per threshold over pairs ranked once.
pub fn sweep_ranked(ranked: &[MinedPair], gold: &[(u64, u64)], thresholds: &[f64]) -> Result<Vec<PrReport>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Params("thresholds must be sorted ascending".into()));
    }
    Ok(thresholds.iter().map(|&t| score(&greedy_accept(ranked, t), gold, t)).collect())
}

/// Mine a planted corpus once and score it at every threshold.
pub fn sweep_threshold(corpus: &PlantedCorpus, thresholds: &[f64], k: usize) -> Result<Vec<PrReport>> {
    let ranked = mine_planted(corpus, k)?;
    sweep_ranked(&ranked, &corpus.gold, thresholds)
}

/// `threshold<TAB>precision<TAB>recall<TAB>f1<TAB>accepted`.
pub fn write_sweep(reports: &[PrReport], out: &mut dyn Write) -> Result<()> {
    for r in reports {
        writeln!(out, "{:.4}\t{:.6}\t{:.6}\t{:.6}\t{}", r.threshold, r.precision, r.recall, r.f1, r.accepted)?;
    }
    Ok(())
}

/// Evenly spaced thresholds from `start` to `end` inclusive.
pub fn threshold_grid(start: f64, end: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![start];
    }
    (0..steps).map(|i| start + (end - start) * i as f64 / (steps - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vindex::dot;
    use proptest::prelude::*;

    fn pair(s: u64, t: u64) -> MinedPair {
        MinedPair { margin: 1.5, src_id: s, tgt_id: t }
    }

    #[test]
    fn zero_noise_pairs_are_identical() {
        let c = plant_corpus(20, 5, 16, 0.0, 1).unwrap();
        for &(a, b) in &c.gold {
            assert_eq!(c.a.row(a as usize), c.b.row(b as usize));
        }
        let none = plant_corpus(0, 7, 8, 0.1, 1).unwrap();
        assert!(none.gold.is_empty());
        assert_eq!(none.a.rows(), 7);
        assert!(plant_corpus(1, 1, 8, -0.5, 1).is_err());
    }

    #[test]
    fn gold_is_one_to_one_and_closer_than_cross_pairs() {
        let c = plant_corpus(300, 100, 64, 0.1, 3).unwrap();
        let a: HashSet<_> = c.gold.iter().map(|g| g.0).collect();
        let b: HashSet<_> = c.gold.iter().map(|g| g.1).collect();
        assert_eq!((a.len(), b.len()), (300, 300));
        let gold_mean: f64 = c.gold.iter().map(|&(x, y)| dot(c.a.row(x as usize), c.b.row(y as usize)) as f64).sum::<f64>() / 300.0;
        let cross_mean: f64 = c
            .gold
            .iter()
            .zip(c.gold.iter().skip(1))
            .map(|(&(x, _), &(_, y))| dot(c.a.row(x as usize), c.b.row(y as usize)) as f64)
            .sum::<f64>()
            / 299.0;
        assert!(gold_mean > cross_mean + 0.3, "{gold_mean} vs {cross_mean}");
        let again = plant_corpus(300, 100, 64, 0.1, 3).unwrap();
        assert_eq!(again.a, c.a);
        assert_eq!(again.gold, c.gold);
    }

    #[test]
    fn score_conventions() {
        let gold = vec![(0, 0), (1, 1), (2, 2), (3, 3)];
        let all: Vec<_> = gold.iter().map(|&(a, b)| pair(a, b)).collect();
        let r = score(&all, &gold, 1.0);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = score(&all[..2], &gold, 1.0);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        let r = score(&[], &gold, 1.0);
        assert_eq!((r.precision, r.recall, r.f1, r.accepted), (1.0, 0.0, 0.0, 0));
    }

    #[test]
    fn sweep_is_monotone_and_matches_single_scores() {
        let c = plant_corpus(200, 200, 32, 0.15, 4).unwrap();
        let ranked = mine_planted(&c, 8).unwrap();
        let ts = [1.0, 1.06, 1.2];
        let r = sweep_ranked(&ranked, &c.gold, &ts).unwrap();
        assert!(r[0].accepted >= r[1].accepted && r[1].accepted >= r[2].accepted);
        let single = sweep_ranked(&ranked, &c.gold, &[1.06]).unwrap();
        assert_eq!(single[0], r[1]);
        assert!(sweep_ranked(&ranked, &c.gold, &[1.2, 1.0]).is_err());
        let mut tsv = Vec::new();
        write_sweep(&r, &mut tsv).unwrap();
        assert_eq!(String::from_utf8(tsv).unwrap().lines().count(), 3);
    }

    #[test]
    fn zero_noise_recall_is_one_over_seeds() {
        for seed in 0..10 {
            let c = plant_corpus(100, 300, 32, 0.0, seed).unwrap();
            let r = sweep_threshold(&c, &[1.0], 16).unwrap();
            assert_eq!(r[0].recall, 1.0, "seed {seed}");
        }
    }

    #[test]
    fn gold_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gold.tsv");
        write_gold(&[(1, 2), (5, 0)], &p).unwrap();
        assert_eq!(read_gold(&p).unwrap(), vec![(1, 2), (5, 0)]);
    }

    proptest! {
        #[test]
        fn score_matches_set_oracle(
            mined in prop::collection::vec((0u64..20, 0u64..20), 0..40),
            gold in prop::collection::vec((0u64..20, 0u64..20), 0..40),
            seed in 0u64..1000,
        ) {
            let pairs: Vec<MinedPair> = mined.iter().map(|&(a, b)| pair(a, b)).collect();
            let r = score(&pairs, &gold, 1.0);
            let ms: HashSet<_> = mined.iter().copied().collect();
            let gs: HashSet<_> = gold.iter().copied().collect();
            let hits = ms.iter().filter(|p| gs.contains(p)).count();
            if !ms.is_empty() {
                prop_assert!((r.precision - hits as f64 / ms.len() as f64).abs() < 1e-12);
            }
            if !gs.is_empty() {
                prop_assert!((r.recall - hits as f64 / gs.len() as f64).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(score(&shuffled, &gold, 1.0), r);
        }
    }
}
