//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use marginmine::corpus::Lang;
use marginmine::encoder::EmbeddingBlock;
use marginmine::evalkit::PlantedCorpus;
use marginmine::miner::{read_pairs, MinedPair, MiningMode};
use marginmine::pipeline::{run, PipelineConfig, RunReport};

pub fn lang(s: &str) -> Lang {
    Lang::new(s).unwrap()
}

/// Same arithmetic as the engine's similarity: a left-to-right f32 sum.
pub fn cos(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Full similarity matrix, rows of `a` against rows of `b`.
pub fn sim_matrix(a: &EmbeddingBlock, b: &EmbeddingBlock) -> Vec<Vec<f32>> {
    (0..a.rows()).map(|i| (0..b.rows()).map(|j| cos(a.row(i), b.row(j))).collect()).collect()
}

/// Indices of the `k` best entries of `row`, by similarity descending then
/// global id ascending, found by sorting everything.
pub fn sorted_top_k(row: &[f32], ids: impl Fn(usize) -> u64, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(ids(x).cmp(&ids(y))));
    order.truncate(k);
    order
}

fn neighbor_sum(row: &[f32], top: &[usize]) -> f64 {
    let mut s = 0.0f64;
    for &j in top {
        s += row[j] as f64;
    }
    s
}

fn margin(c: f32, sx: f64, sy: f64, k: usize) -> Option<f32> {
    let two_k = 2.0 * k as f64;
    let denom = sx / two_k + sy / two_k;
    (denom > 0.0 && c > 0.0).then(|| (c as f64 / denom) as f32)
}

fn greedy(mut scored: Vec<(f32, u64, u64)>, threshold: f64) -> Vec<(u64, u64)> {
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = BTreeSet::new();
    let mut used_b = BTreeSet::new();
    let mut out = Vec::new();
    for (m, s, t) in scored {
        if (m as f64) < threshold {
            break;
        }
        if !used_a.contains(&s) && !used_b.contains(&t) {
            used_a.insert(s);
            used_b.insert(t);
            out.push((s, t));
        }
    }
    out
}

/// Brute-force max-strategy mining: all-pairs cosine, margins over both
/// k-neighborhoods, greedy 1:1 acceptance.
pub fn oracle_max_strategy(a: &EmbeddingBlock, b: &EmbeddingBlock, k: usize, threshold: f64) -> BTreeSet<(u64, u64)> {
    let sims = sim_matrix(a, b);
    let cols: Vec<Vec<f32>> = (0..b.rows()).map(|j| sims.iter().map(|r| r[j]).collect()).collect();
    let a_top: Vec<Vec<usize>> = sims.iter().map(|r| sorted_top_k(r, |j| b.global_id(j), k)).collect();
    let b_top: Vec<Vec<usize>> = cols.iter().map(|c| sorted_top_k(c, |i| a.global_id(i), k)).collect();
    let sa: Vec<f64> = sims.iter().zip(&a_top).map(|(r, t)| neighbor_sum(r, t)).collect();
    let sb: Vec<f64> = cols.iter().zip(&b_top).map(|(c, t)| neighbor_sum(c, t)).collect();
    let mut cands: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for (i, t) in a_top.iter().enumerate() {
        for &j in t {
            cands.insert((i, j), ());
        }
    }
    for (j, t) in b_top.iter().enumerate() {
        for &i in t {
            cands.insert((i, j), ());
        }
    }
    let scored = cands
        .keys()
        .filter_map(|&(i, j)| margin(sims[i][j], sa[i], sb[j], k).map(|m| (m, a.global_id(i), b.global_id(j))))
        .collect();
    greedy(scored, threshold).into_iter().collect()
}

/// Brute-force forward-only mining: every target shard is scored and
/// selected on its own, the source neighborhood standing in for both sides.
pub fn oracle_forward_only(a: &EmbeddingBlock, shards: &[EmbeddingBlock], k: usize, threshold: f64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for b in shards {
        let sims = sim_matrix(a, b);
        let mut scored = Vec::new();
        for (i, row) in sims.iter().enumerate() {
            let top = sorted_top_k(row, |j| b.global_id(j), k);
            let sx = neighbor_sum(row, &top);
            for &j in &top {
                if let Some(m) = margin(row[j], sx, sx, k) {
                    scored.push((m, a.global_id(i), b.global_id(j)));
                }
            }
        }
        out.extend(greedy(scored, threshold));
    }
    out
}

/// Pipeline settings for a planted corpus written as prepared input.
#[derive(Debug, Clone)]
pub struct PlantedRun {
    pub k: usize,
    pub threshold: f64,
    pub block_capacity: u64,
    pub shard_cap: u64,
    pub mode: MiningMode,
    pub workers: usize,
}

impl Default for PlantedRun {
    fn default() -> Self {
        PlantedRun { k: 16, threshold: 1.06, block_capacity: 10_000, shard_cap: 1_000_000, mode: MiningMode::MaxStrategy, workers: 1 }
    }
}

impl PlantedRun {
    pub fn config(&self, input: &Path, work: &Path, dim: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.work_dir = work.to_path_buf();
        cfg.input_dir = input.to_path_buf();
        cfg.langs = vec![lang("xx"), lang("yy")];
        cfg.pairs = vec![(lang("xx"), lang("yy"))];
        cfg.prepared = true;
        cfg.encoder_dim = dim;
        cfg.k = self.k;
        cfg.threshold = self.threshold;
        cfg.block_capacity = self.block_capacity;
        cfg.shard_cap = self.shard_cap;
        cfg.mode = self.mode;
        cfg.workers = self.workers;
        cfg
    }

    /// Write the corpus under `root/input`, run the pipeline in `root/work`
    /// and return the mined pairs.
    pub fn mine(&self, corpus: &PlantedCorpus, root: &Path) -> (Vec<MinedPair>, RunReport, PipelineConfig) {
        let input = root.join("input");
        corpus.write_prepared(&input, &lang("xx"), &lang("yy"), self.block_capacity).unwrap();
        let cfg = self.config(&input, &root.join("work"), corpus.a.dim());
        let report = run(&cfg).unwrap();
        assert!(report.success(), "pipeline failed: {:?}", report.failed());
        let pairs = read_pairs(&root.join("work/mine/xx-yy/pairs.tsv")).unwrap();
        (pairs, report, cfg)
    }
}

pub fn id_set(pairs: &[MinedPair]) -> BTreeSet<(u64, u64)> {
    pairs.iter().map(|p| (p.src_id, p.tgt_id)).collect()
}

/// Every regular file under `root` with its sha256, keyed by relative path.
pub fn tree_digests(root: &Path, skip: &[&str]) -> BTreeMap<PathBuf, String> {
    fn walk(dir: &Path, root: &Path, skip: &[&str], out: &mut BTreeMap<PathBuf, String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            if skip.iter().any(|s| rel == Path::new(s)) {
                continue;
            }
            if p.is_dir() {
                walk(&p, root, skip, out);
            } else {
                out.insert(rel, marginmine::pipeline::file_digest(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, skip, &mut out);
    out
}
