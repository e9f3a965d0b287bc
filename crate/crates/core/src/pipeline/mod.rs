//! Job graph for a full mining run.
//!
//! A run is split into three tasks. The text task turns raw input into
//! deduplicated sentence blocks, one job per language. Once the corpus
//! manifests exist the rest of the graph can be planned: embedding per block,
//! index training, filling and merging per shard, neighbor search per
//! direction and shard, margin combination and text attachment per pair.
//!
//! Every job has a fingerprint: the digest of the config keys it depends on
//! plus the content digests of its input files. A job is skipped when its
//! last successful run had the same fingerprint, its recorded outputs are
//! unchanged on disk and none of its dependencies ran in this invocation.

mod config;
mod exec;
mod plan;
mod stages;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{CorpusError, Lang};
use crate::encoder::EmbeddingError;
use crate::evalkit::EvalError;
use crate::miner::{Direction, MinerError};
use crate::vindex::IndexError;

pub use config::{LidMode, PipelineConfig, SearchKind, CONFIG_KEYS};
pub use exec::{execute, file_digest, load_manifests, run, ExecOptions, JobOutcome, JobRecord, RunReport, RunState};
pub use plan::{plan, plan_text, shards, Dag, JobSpec, Stage};
pub use stages::{filter_candidates, run_job};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("planning error: {0}")]
    Plan(String),
    #[error("{0}")]
    Job(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// File locations under the work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    /// Block-deduplicated staging blocks of the text task.
    pub fn text_dir(&self, lang: &Lang) -> PathBuf {
        self.root.join("text").join(lang.as_str())
    }

    pub fn emb_dir(&self) -> PathBuf {
        self.root.join("emb")
    }

    pub fn emb(&self, lang: &Lang, block: u32) -> PathBuf {
        crate::encoder::embedding_path(&self.emb_dir(), lang, block)
    }

    pub fn trained_index(&self, lang: &Lang) -> PathBuf {
        self.root.join("index").join(format!("{lang}.trained.idx"))
    }

    pub fn index_part(&self, lang: &Lang, block: u32) -> PathBuf {
        self.root.join("index").join("parts").join(format!("{lang}.{block:05}.idx"))
    }

    pub fn index_shard(&self, lang: &Lang, shard: u32) -> PathBuf {
        self.root.join("index").join(crate::vindex::index_file_name(lang, shard))
    }

    pub fn mine_dir(&self, src: &Lang, tgt: &Lang) -> PathBuf {
        self.root.join("mine").join(format!("{src}-{tgt}"))
    }

    pub fn neighbors(&self, src: &Lang, tgt: &Lang, direction: Direction, shard: u32) -> PathBuf {
        self.mine_dir(src, tgt).join(format!("{direction}.{shard}.nbr"))
    }

    pub fn pairs(&self, src: &Lang, tgt: &Lang) -> PathBuf {
        self.mine_dir(src, tgt).join("pairs.tsv")
    }

    pub fn stats(&self, src: &Lang, tgt: &Lang) -> PathBuf {
        self.mine_dir(src, tgt).join("stats.json")
    }

    pub fn bitext(&self, src: &Lang, tgt: &Lang) -> PathBuf {
        self.root.join("bitext").join(format!("{src}-{tgt}.tsv"))
    }

    pub fn journal(&self) -> PathBuf {
        self.root.join("journal.jsonl")
    }

    pub fn state(&self) -> PathBuf {
        self.root.join("state.json")
    }

    /// Path relative to the work directory, for journal records.
    pub fn relative<'a>(&self, p: &'a Path) -> &'a Path {
        p.strip_prefix(&self.root).unwrap_or(p)
    }
}
