//! Nearest-neighbor search over unit-normalized embeddings.
//!
//! Similarity is the dot product (cosine for normalized rows), larger is
//! better, and every ranking breaks ties by ascending global id.
//!
//! Two backends implement [`KnnIndex`]:
//!
//! - [`FlatIndex`]: exhaustive scan, exact.
//! - [`IvfSearcher`] over an [`IndexShard`]: inverted lists of
//!   product-quantized residuals behind an optional learned rotation, with
//!   optional exact re-ranking against retained full vectors.
//!
//! Shards built from the same [`TrainedQuantizers`] can be filled in parallel
//! and merged; the merged shard answers queries exactly like a shard filled
//! sequentially.

mod flat;
mod io;
mod ivf;
pub mod kmeans;
mod pq;

use thiserror::Error;

use crate::encoder::EmbeddingBlock;

pub use flat::FlatIndex;
pub use io::{index_file_name, read_index, write_index, IVF_MAGIC, IVF_VERSION};
pub use ivf::{
    merge_shards, train_index, CoarseQuantizer, IndexShard, InvertedList, IvfSearcher, TrainParams, TrainReport,
    TrainedQuantizers,
};
pub use pq::{PqCodebook, Rotation, PQ_CODES};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {found}")]
    Dim { expected: usize, found: usize },
    #[error("training sample has {got} rows, need at least {needed}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("invalid index parameters: {0}")]
    Params(String),
    #[error("global id {0} is already stored in this shard")]
    DuplicateId(u64),
    #[error("shards were built from different quantizers")]
    QuantizerMismatch,
    #[error("corrupt index file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

/// Dot product accumulated left to right in `f32`.
///
/// All exact similarities in the crate go through this order of operations,
/// so exact scores are bit-reproducible between backends.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |s, (x, y)| s + x * y)
}

/// Top-k result for one query, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Neighbors {
    pub ids: Vec<u64>,
    pub sims: Vec<f32>,
    /// Fewer than `k` neighbors were available.
    pub short: bool,
}

impl Neighbors {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Bounded best-k collector ordered by similarity descending, then id ascending.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    items: Vec<(f32, u64)>,
}

#[inline]
fn better(a: (f32, u64), b: (f32, u64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK { k, items: Vec::with_capacity(k + 1) }
    }

    #[inline]
    pub fn offer(&mut self, sim: f32, id: u64) {
        if self.k == 0 {
            return;
        }
        if self.items.len() == self.k && !better((sim, id), self.items[self.k - 1]) {
            return;
        }
        let pos = self.items.partition_point(|&e| better(e, (sim, id)));
        self.items.insert(pos, (sim, id));
        self.items.truncate(self.k);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Score of the k-th entry once the collector is full.
    pub fn kth(&self) -> Option<f32> {
        (self.k > 0 && self.items.len() == self.k).then(|| self.items[self.k - 1].0)
    }

    pub fn into_sorted(self) -> Vec<(f32, u64)> {
        self.items
    }

    pub fn into_neighbors(self) -> Neighbors {
        let short = self.items.len() < self.k;
        let (sims, ids) = self.items.into_iter().unzip();
        Neighbors { ids, sims, short }
    }
}

/// Combine per-shard results for the same query into one top-k list.
pub fn merge_neighbors<'a>(parts: impl IntoIterator<Item = &'a Neighbors>, k: usize) -> Neighbors {
    let mut top = TopK::new(k);
    for p in parts {
        for (&id, &sim) in p.ids.iter().zip(&p.sims) {
            top.offer(sim, id);
        }
    }
    top.into_neighbors()
}

/// A searchable collection of vectors keyed by global id.
pub trait KnnIndex: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> u64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// One result per query row, in row order.
    fn search(&self, queries: &EmbeddingBlock, k: usize) -> Result<Vec<Neighbors>>;
}

/// Exhaustive top-k of `queries` against `vectors`.
pub fn search_exact(vectors: &EmbeddingBlock, queries: &EmbeddingBlock, k: usize) -> Result<Vec<Neighbors>> {
    FlatIndex::from_blocks(vectors.dim(), [vectors])?.search(queries, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_orders_and_breaks_ties_by_id() {
        let mut t = TopK::new(3);
        for (s, id) in [(0.5, 9), (0.9, 4), (0.5, 2), (0.1, 1), (0.9, 3), (0.5, 1)] {
            t.offer(s, id);
        }
        assert_eq!(t.into_sorted(), vec![(0.9, 3), (0.9, 4), (0.5, 1)]);
        let mut t = TopK::new(5);
        t.offer(0.2, 7);
        let n = t.into_neighbors();
        assert!(n.short);
        assert_eq!(n.ids, vec![7]);
    }

    #[test]
    fn merging_shard_results() {
        let a = Neighbors { ids: vec![1, 5], sims: vec![0.9, 0.3], short: false };
        let b = Neighbors { ids: vec![8, 2], sims: vec![0.7, 0.3], short: false };
        let m = merge_neighbors([&a, &b], 3);
        assert_eq!(m.ids, vec![1, 8, 2]);
        assert!(!m.short);
    }
}
