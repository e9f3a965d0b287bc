use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;

use super::kmeans::{kmeans, nearest, KMeansParams, Metric};
use super::pq::{PqCodebook, Rotation, PQ_CODES};
use super::{dot, IndexError, KnnIndex, Neighbors, Result, TopK};
use crate::encoder::EmbeddingBlock;

/// Spherical k-means centroids partitioning the (rotated) space.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseQuantizer {
    pub dim: usize,
    pub nlist: usize,
    /// `nlist * dim`, unit rows.
    pub centroids: Vec<f32>,
}

impl CoarseQuantizer {
    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// List with the largest dot product, ties to the lowest index.
    pub fn assign(&self, v: &[f32]) -> usize {
        nearest(v, &self.centroids, self.dim, Metric::InnerProduct).0
    }
}

/// Frozen quantizers shared by every shard of one language.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedQuantizers {
    pub rotation: Rotation,
    pub coarse: CoarseQuantizer,
    pub pq: PqCodebook,
}

fn bits(v: &[f32]) -> impl Iterator<Item = u32> + '_ {
    v.iter().map(|x| x.to_bits())
}

impl TrainedQuantizers {
    pub fn dim(&self) -> usize {
        self.coarse.dim
    }

    pub fn nlist(&self) -> usize {
        self.coarse.nlist
    }

    pub fn m(&self) -> usize {
        self.pq.m
    }

    /// Bit-for-bit equality of every parameter.
    pub fn bit_eq(&self, other: &TrainedQuantizers) -> bool {
        let rot = match (&self.rotation.matrix, &other.rotation.matrix) {
            (None, None) => true,
            (Some(a), Some(b)) => a.len() == b.len() && bits(a).eq(bits(b)),
            _ => false,
        };
        rot && self.coarse.dim == other.coarse.dim
            && self.coarse.nlist == other.coarse.nlist
            && bits(&self.coarse.centroids).eq(bits(&other.coarse.centroids))
            && self.pq.m == other.pq.m
            && bits(&self.pq.codebooks).eq(bits(&other.pq.codebooks))
    }

    /// Rotate `v`, pick its list and PQ-encode the residual.
    pub fn encode(&self, v: &[f32], code: &mut [u8]) -> usize {
        let mut y = vec![0f32; self.dim()];
        self.rotation.apply(v, &mut y);
        let list = self.coarse.assign(&y);
        for (r, c) in y.iter_mut().zip(self.coarse.centroid(list)) {
            *r -= c;
        }
        self.pq.encode(&y, code);
        list
    }

    /// `|R v - reconstruct(list, code)|`, which bounds the error of every
    /// asymmetric estimate for a unit query.
    pub fn quantization_error(&self, v: &[f32], list: usize, code: &[u8]) -> f32 {
        let mut y = vec![0f32; self.dim()];
        self.rotation.apply(v, &mut y);
        let rec = self.reconstruct(list, code);
        y.iter().zip(&rec).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt() as f32
    }

    /// `centroid + decode(code)` in the rotated space.
    pub fn reconstruct(&self, list: usize, code: &[u8]) -> Vec<f32> {
        let mut out = vec![0f32; self.dim()];
        self.pq.decode(code, &mut out);
        for (o, c) in out.iter_mut().zip(self.coarse.centroid(list)) {
            *o += c;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub nlist: usize,
    pub m: usize,
    pub use_rotation: bool,
    pub seed: u64,
    pub iterations: usize,
    pub rotation_rounds: usize,
}

impl TrainParams {
    pub fn new(nlist: usize, m: usize, use_rotation: bool, seed: u64) -> Self {
        TrainParams { nlist, m, use_rotation, seed, iterations: 25, rotation_rounds: 3 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub coarse_mse: Vec<f64>,
    /// Per-iteration PQ reconstruction error of the training residuals.
    pub pq_mse: Vec<f64>,
}

/// Train rotation, coarse quantizer and residual PQ on a sample.
pub fn train_index(sample: &[&EmbeddingBlock], params: &TrainParams) -> Result<(TrainedQuantizers, TrainReport)> {
    let dim = sample.first().map(|b| b.dim()).ok_or(IndexError::SampleTooSmall { needed: 1, got: 0 })?;
    let mut data = Vec::new();
    for b in sample {
        if b.dim() != dim {
            return Err(IndexError::Dim { expected: dim, found: b.dim() });
        }
        data.extend_from_slice(b.as_slice());
    }
    let n = data.len() / dim;
    if params.nlist == 0 {
        return Err(IndexError::Params("nlist must be at least 1".into()));
    }
    if params.m == 0 || dim % params.m != 0 {
        return Err(IndexError::Params(format!("dim {dim} is not divisible by m {}", params.m)));
    }
    let needed = params.nlist.max(PQ_CODES);
    if n < needed {
        return Err(IndexError::SampleTooSmall { needed, got: n });
    }

    let rotation = if params.use_rotation {
        Rotation::train_opq(&data, dim, params.m, params.rotation_rounds, params.iterations, params.seed ^ 0x9e37_79b9)?
    } else {
        Rotation::identity(dim)
    };
    let rotated = rotation.apply_all(&data);
    let coarse = kmeans(
        &rotated,
        dim,
        &KMeansParams { k: params.nlist, iterations: params.iterations, seed: params.seed, metric: Metric::InnerProduct },
    );
    let mut residuals = rotated;
    for (row, &a) in residuals.chunks_exact_mut(dim).zip(&coarse.assignments) {
        let c = &coarse.centroids[a as usize * dim..(a as usize + 1) * dim];
        for (r, x) in row.iter_mut().zip(c) {
            *r -= x;
        }
    }
    let (pq, pq_mse) = PqCodebook::train(&residuals, dim, params.m, params.iterations, params.seed.wrapping_add(1))?;
    let quantizers = TrainedQuantizers {
        rotation,
        coarse: CoarseQuantizer { dim, nlist: params.nlist, centroids: coarse.centroids },
        pq,
    };
    Ok((quantizers, TrainReport { coarse_mse: coarse.mse_trace, pq_mse }))
}

/// Entries of one coarse cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedList {
    pub ids: Vec<u64>,
    /// `m` bytes per entry.
    pub codes: Vec<u8>,
    /// Full vectors, `dim` per entry, only when the shard retains them.
    pub vectors: Vec<f32>,
    /// Per-entry [`TrainedQuantizers::quantization_error`], alongside `vectors`.
    pub errors: Vec<f32>,
}

impl InvertedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encoded vectors of one shard, grouped by coarse cell.
#[derive(Debug, Clone)]
pub struct IndexShard {
    quantizers: Arc<TrainedQuantizers>,
    lists: Vec<InvertedList>,
    keep_vectors: bool,
    ids: HashSet<u64>,
}

impl IndexShard {
    pub fn new(quantizers: Arc<TrainedQuantizers>, keep_vectors: bool) -> Self {
        let lists = vec![InvertedList::default(); quantizers.nlist()];
        IndexShard { quantizers, lists, keep_vectors, ids: HashSet::new() }
    }

    /// Assemble a shard from stored lists, recomputing the error bounds of
    /// retained vectors.
    pub(crate) fn from_parts(quantizers: Arc<TrainedQuantizers>, mut lists: Vec<InvertedList>, keep_vectors: bool) -> Result<Self> {
        let (dim, m) = (quantizers.dim(), quantizers.m());
        if keep_vectors {
            lists.par_iter_mut().enumerate().for_each(|(j, l)| {
                l.errors = l
                    .vectors
                    .chunks_exact(dim)
                    .zip(l.codes.chunks_exact(m))
                    .map(|(v, code)| quantizers.quantization_error(v, j, code))
                    .collect();
            });
        }
        let mut ids = HashSet::new();
        for l in &lists {
            for &id in &l.ids {
                if !ids.insert(id) {
                    return Err(IndexError::DuplicateId(id));
                }
            }
        }
        Ok(IndexShard { quantizers, lists, keep_vectors, ids })
    }

    pub fn quantizers(&self) -> &Arc<TrainedQuantizers> {
        &self.quantizers
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn keeps_vectors(&self) -> bool {
        self.keep_vectors
    }

    pub fn count(&self) -> u64 {
        self.ids.len() as u64
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.contains(&id)
    }

    /// Encode and append every row of `block`.
    pub fn add_block(&mut self, block: &EmbeddingBlock) -> Result<()> {
        let q = &self.quantizers;
        let (dim, m) = (q.dim(), q.m());
        if block.dim() != dim {
            return Err(IndexError::Dim { expected: dim, found: block.dim() });
        }
        let mut fresh = HashSet::with_capacity(block.rows());
        for (id, _) in block.iter_rows() {
            if self.ids.contains(&id) || !fresh.insert(id) {
                return Err(IndexError::DuplicateId(id));
            }
        }
        let keep = self.keep_vectors;
        let encoded: Vec<(usize, Vec<u8>, f32)> = (0..block.rows())
            .into_par_iter()
            .map(|r| {
                let mut code = vec![0u8; m];
                let list = q.encode(block.row(r), &mut code);
                let err = if keep { q.quantization_error(block.row(r), list, &code) } else { 0.0 };
                (list, code, err)
            })
            .collect();
        for (r, (list, code, err)) in encoded.into_iter().enumerate() {
            let l = &mut self.lists[list];
            l.ids.push(block.global_id(r));
            l.codes.extend_from_slice(&code);
            if keep {
                l.vectors.extend_from_slice(block.row(r));
                l.errors.push(err);
            }
        }
        self.ids.extend(fresh);
        Ok(())
    }
}

/// Concatenate the lists of shards that share identical quantizers, in order.
pub fn merge_shards(shards: Vec<IndexShard>) -> Result<IndexShard> {
    let mut iter = shards.into_iter();
    let mut merged = iter.next().ok_or_else(|| IndexError::Params("nothing to merge".into()))?;
    for shard in iter {
        if !(Arc::ptr_eq(&merged.quantizers, &shard.quantizers) || merged.quantizers.bit_eq(&shard.quantizers)) {
            return Err(IndexError::QuantizerMismatch);
        }
        if merged.keep_vectors != shard.keep_vectors {
            return Err(IndexError::Params("cannot merge shards with and without full vectors".into()));
        }
        for l in &shard.lists {
            if let Some(&id) = l.ids.iter().find(|id| merged.ids.contains(id)) {
                return Err(IndexError::DuplicateId(id));
            }
        }
        for (dst, src) in merged.lists.iter_mut().zip(shard.lists) {
            merged.ids.extend(src.ids.iter().copied());
            dst.ids.extend(src.ids);
            dst.codes.extend(src.codes);
            dst.vectors.extend(src.vectors);
            dst.errors.extend(src.errors);
        }
    }
    Ok(merged)
}

/// Query-time view of a shard.
#[derive(Debug, Clone, Copy)]
pub struct IvfSearcher<'a> {
    pub shard: &'a IndexShard,
    pub nprobe: usize,
    /// Re-rank with exact dot products when the shard retains full vectors:
    /// the best `4k` estimates first, then every other probed entry whose
    /// estimate plus its error bound still reaches the k-th exact score.
    pub refine: bool,
}

/// Slack added to error bounds to absorb rounding in the rotation and sums.
const BOUND_SLACK: f32 = 1e-4;

type Candidate = (f32, u64, u32, u32);

impl<'a> IvfSearcher<'a> {
    pub fn new(shard: &'a IndexShard, nprobe: usize, refine: bool) -> Result<Self> {
        let nlist = shard.quantizers.nlist();
        if nprobe == 0 || nprobe > nlist {
            return Err(IndexError::Params(format!("nprobe {nprobe} outside 1..={nlist}")));
        }
        Ok(IvfSearcher { shard, nprobe, refine })
    }

    /// Visit every entry of the probed lists with its asymmetric estimate.
    fn scan(&self, cells: &[(f32, u64)], table: &[f32], mut f: impl FnMut(Candidate)) {
        let m = self.shard.quantizers.m();
        for &(base, list) in cells {
            let l = &self.shard.lists[list as usize];
            for (pos, (&id, code)) in l.ids.iter().zip(l.codes.chunks_exact(m)).enumerate() {
                let mut est = base;
                for (s, &c) in code.iter().enumerate() {
                    est += table[s * PQ_CODES + c as usize];
                }
                f((est, id, list as u32, pos as u32));
            }
        }
    }

    fn search_one(&self, query: &[f32], k: usize) -> Neighbors {
        let q = &self.shard.quantizers;
        let dim = q.dim();
        let mut y = vec![0f32; dim];
        q.rotation.apply(query, &mut y);

        let mut cells = TopK::new(self.nprobe);
        for j in 0..q.nlist() {
            cells.offer(dot(&y, q.coarse.centroid(j)), j as u64);
        }
        let cells = cells.into_sorted();
        let table = q.pq.inner_product_table(&y);
        let rerank = self.refine && self.shard.keep_vectors;
        let cap = if rerank { 4 * k } else { k };

        let worse = |a: &Candidate, b: &Candidate| a.0 < b.0 || (a.0 == b.0 && a.1 > b.1);
        let mut best: Vec<Candidate> = Vec::with_capacity(cap + 1);
        self.scan(&cells, &table, |cand| {
            if best.len() == cap && !worse(&best[cap - 1], &cand) {
                return;
            }
            let at = best.partition_point(|e| !worse(e, &cand));
            best.insert(at, cand);
            best.truncate(cap);
        });
        if !rerank {
            let mut top = TopK::new(k);
            for (est, id, _, _) in best {
                top.offer(est, id);
            }
            return top.into_neighbors();
        }

        let exact = |list: u32, pos: u32| {
            let l = &self.shard.lists[list as usize];
            dot(query, &l.vectors[pos as usize * dim..(pos as usize + 1) * dim])
        };
        let mut top = TopK::new(k);
        let mut seen = HashSet::with_capacity(best.len());
        for &(_, id, list, pos) in &best {
            top.offer(exact(list, pos), id);
            seen.insert(id);
        }
        let kth = top.kth().unwrap_or(f32::NEG_INFINITY);
        let qnorm = y.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt() as f32;
        self.scan(&cells, &table, |(est, id, list, pos)| {
            let err = self.shard.lists[list as usize].errors[pos as usize];
            if est + qnorm * err + BOUND_SLACK >= kth && !seen.contains(&id) {
                top.offer(exact(list, pos), id);
            }
        });
        top.into_neighbors()
    }
}

impl KnnIndex for IvfSearcher<'_> {
    fn dim(&self) -> usize {
        self.shard.quantizers.dim()
    }

    fn len(&self) -> u64 {
        self.shard.count()
    }

    fn search(&self, queries: &EmbeddingBlock, k: usize) -> Result<Vec<Neighbors>> {
        if queries.dim() != self.dim() {
            return Err(IndexError::Dim { expected: self.dim(), found: queries.dim() });
        }
        if k == 0 {
            return Err(IndexError::Params("k must be at least 1".into()));
        }
        Ok((0..queries.rows()).into_par_iter().map(|r| self.search_one(queries.row(r), k)).collect())
    }
}
