use super::{Direction, MinerError, NeighborList, NeighborSet, Result};
use crate::encoder::EmbeddingBlock;
use crate::vindex::{merge_neighbors, KnnIndex, Neighbors};

/// Top-`k` neighbors of every query row. `context` names the job in errors.
pub fn compute_direction(
    queries: &EmbeddingBlock,
    index: &dyn KnnIndex,
    k: usize,
    direction: Direction,
    context: &str,
) -> Result<Vec<NeighborList>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let found = index.search(queries, k).map_err(|source| MinerError::Search { context: context.to_string(), source })?;
    Ok(found
        .into_iter()
        .enumerate()
        .map(|(r, n)| NeighborList { query_id: queries.global_id(r), neighbor_ids: n.ids, sims: n.sims, direction })
        .collect())
}

/// Combine lists computed against several shards of one index into lists
/// over the whole index. Every part must cover the same queries in the same
/// order.
pub fn merge_shard_lists(parts: &[NeighborSet]) -> Result<NeighborSet> {
    let first = parts.first().ok_or_else(|| MinerError::Config("no neighbor lists to merge".into()))?;
    for p in parts {
        if p.k != first.k {
            return Err(MinerError::KMismatch { forward: first.k, backward: p.k });
        }
        if p.direction != first.direction {
            return Err(MinerError::WrongDirection { expected: first.direction, found: p.direction });
        }
        if p.lists.len() != first.lists.len() {
            return Err(MinerError::Config("shards cover different query sets".into()));
        }
    }
    let mut lists = Vec::with_capacity(first.lists.len());
    for (i, head) in first.lists.iter().enumerate() {
        let mut per_shard = Vec::with_capacity(parts.len());
        for p in parts {
            let l = &p.lists[i];
            if l.query_id != head.query_id {
                return Err(MinerError::Config(format!("query {} misaligned across shards", head.query_id)));
            }
            per_shard.push(Neighbors { ids: l.neighbor_ids.clone(), sims: l.sims.clone(), short: false });
        }
        let m = merge_neighbors(&per_shard, first.k);
        lists.push(NeighborList { query_id: head.query_id, neighbor_ids: m.ids, sims: m.sims, direction: first.direction });
    }
    Ok(NeighborSet { k: first.k, direction: first.direction, lists })
}
