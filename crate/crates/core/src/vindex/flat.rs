use rayon::prelude::*;

use super::{IndexError, KnnIndex, Neighbors, Result, TopK};
use crate::encoder::EmbeddingBlock;

/// Vectors per panel.
const LANES: usize = 16;
/// Queries scored together against one panel.
const QUERY_GROUP: usize = 4;

/// Exact inner-product index.
///
/// Vectors are stored in panels of 16, transposed so that one component of
/// 16 vectors is contiguous. The scan then accumulates 16 independent dot
/// products per query with each product summed in plain component order, so
/// the scores are bit-identical to [`super::dot`].
#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<u64>,
    panels: Vec<f32>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        FlatIndex { dim, ids: Vec::new(), panels: Vec::new() }
    }

    pub fn from_blocks<'a>(dim: usize, blocks: impl IntoIterator<Item = &'a EmbeddingBlock>) -> Result<Self> {
        let mut idx = FlatIndex::new(dim);
        for b in blocks {
            idx.add(b)?;
        }
        Ok(idx)
    }

    pub fn add(&mut self, block: &EmbeddingBlock) -> Result<()> {
        if block.dim() != self.dim {
            return Err(IndexError::Dim { expected: self.dim, found: block.dim() });
        }
        for (id, v) in block.iter_rows() {
            let slot = self.ids.len() % LANES;
            if slot == 0 {
                self.panels.resize(self.panels.len() + LANES * self.dim, 0.0);
            }
            let panel = self.panels.len() - LANES * self.dim;
            for (i, &x) in v.iter().enumerate() {
                self.panels[panel + i * LANES + slot] = x;
            }
            self.ids.push(id);
        }
        Ok(())
    }

    fn scan_group(&self, queries: &[&[f32]], tops: &mut [TopK]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the feature was detected at runtime.
                return unsafe { self.scan_group_avx512(queries, tops) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { self.scan_group_avx2(queries, tops) };
            }
        }
        self.scan_group_generic(queries, tops)
    }

    // Wider registers only; no fused multiply-add, so the rounding matches
    // the generic path exactly.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn scan_group_avx512(&self, queries: &[&[f32]], tops: &mut [TopK]) {
        self.scan_group_generic(queries, tops)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn scan_group_avx2(&self, queries: &[&[f32]], tops: &mut [TopK]) {
        self.scan_group_generic(queries, tops)
    }

    #[inline(always)]
    fn scan_group_generic(&self, queries: &[&[f32]], tops: &mut [TopK]) {
        let dim = self.dim;
        let mut q = vec![[0f32; QUERY_GROUP]; dim];
        for (g, query) in queries.iter().enumerate() {
            for i in 0..dim {
                q[i][g] = query[i];
            }
        }
        for (p, panel) in self.panels.chunks_exact(LANES * dim).enumerate() {
            let mut acc = [[0f32; LANES]; QUERY_GROUP];
            for (i, qi) in q.iter().enumerate() {
                let col: &[f32; LANES] = panel[i * LANES..(i + 1) * LANES].try_into().unwrap();
                for g in 0..QUERY_GROUP {
                    let s = qi[g];
                    for l in 0..LANES {
                        acc[g][l] += s * col[l];
                    }
                }
            }
            let base = p * LANES;
            let valid = (self.ids.len() - base).min(LANES);
            for (g, top) in tops.iter_mut().enumerate() {
                for l in 0..valid {
                    top.offer(acc[g][l], self.ids[base + l]);
                }
            }
        }
    }
}

impl KnnIndex for FlatIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> u64 {
        self.ids.len() as u64
    }

    fn search(&self, queries: &EmbeddingBlock, k: usize) -> Result<Vec<Neighbors>> {
        if queries.dim() != self.dim {
            return Err(IndexError::Dim { expected: self.dim, found: queries.dim() });
        }
        if k == 0 {
            return Err(IndexError::Params("k must be at least 1".into()));
        }
        let rows: Vec<&[f32]> = queries.iter_rows().map(|(_, v)| v).collect();
        let groups: Vec<Vec<Neighbors>> = rows
            .par_chunks(QUERY_GROUP)
            .map(|group| {
                let mut tops: Vec<TopK> = (0..group.len()).map(|_| TopK::new(k)).collect();
                self.scan_group(group, &mut tops);
                tops.into_iter().map(TopK::into_neighbors).collect()
            })
            .collect();
        Ok(groups.into_iter().flatten().collect())
    }
}
