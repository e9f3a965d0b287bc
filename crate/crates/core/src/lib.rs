//! Global margin-based bitext mining.
//!
//! Every sentence of one monolingual corpus is compared with every sentence
//! of another in a shared embedding space. Pairs are scored with the
//! neighborhood-normalized margin and selected greedily with unique sources
//! and targets.
//!
//! Modules follow the processing order:
//!
//! - [`corpus`]: sentence splitting, language filtering, block and global dedup.
//! - [`encoder`]: sentence embeddings and the `EMB1` block format.
//! - [`vindex`]: exact and IVF-PQ nearest-neighbor search, shard merging.
//! - [`miner`]: neighbor lists, margin scores, max-strategy and forward-only selection.
//! - [`pipeline`]: manifest-driven job DAG with digest-based resumability.
//! - [`evalkit`]: planted-pair corpora, precision/recall scoring, threshold sweeps.

pub mod corpus;
pub mod encoder;
pub mod vindex;
pub mod miner;
pub mod evalkit;
pub mod pipeline;

/// Size the global worker pool used for data parallelism inside a job.
/// Returns false if the pool was already initialized.
pub fn set_threads(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
}
