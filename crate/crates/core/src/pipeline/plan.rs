use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use super::{Layout, PipelineConfig, PipelineError, Result, SearchKind};
use crate::corpus::{block_path, manifest_path, BlockManifest, Lang};
use crate::miner::{Direction, MiningMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Preprocess,
    Embed,
    IndexTrain,
    IndexAdd,
    IndexMerge,
    MineFwd,
    MineBwd,
    MineCombine,
    Attach,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Embed => "embed",
            Stage::IndexTrain => "index-train",
            Stage::IndexAdd => "index-add",
            Stage::IndexMerge => "index-merge",
            Stage::MineFwd => "mine-fwd",
            Stage::MineBwd => "mine-bwd",
            Stage::MineCombine => "mine-combine",
            Stage::Attach => "attach",
        }
    }

    /// Config keys that can change this stage's output.
    pub fn config_keys(self, cfg: &PipelineConfig) -> &'static [&'static str] {
        match self {
            Stage::Preprocess if cfg.prepared => &["prepared"],
            Stage::Preprocess => &["prepared", "block_capacity", "max_chars", "min_conf", "lid"],
            Stage::Embed if cfg.prepared => &["prepared", "encoder_dim"],
            Stage::Embed => &["prepared", "encoder_dim", "encoder_seed"],
            Stage::IndexTrain => &["nlist", "pq_m", "rotation", "train_sample", "seed"],
            Stage::IndexAdd => &["keep_vectors"],
            Stage::IndexMerge => &[],
            Stage::MineFwd | Stage::MineBwd => match cfg.search {
                SearchKind::Exact => &["k", "search"],
                SearchKind::Ivf => &["k", "search", "nprobe", "refine"],
            },
            Stage::MineCombine => &["k", "mode", "threshold"],
            Stage::Attach => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    /// Unique and stable, e.g. `embed:de:00003` or `mine-fwd:de-en:1`.
    pub id: String,
    pub stage: Stage,
    pub lang: Option<Lang>,
    pub pair: Option<(Lang, Lang)>,
    pub block: Option<u32>,
    pub shard: Option<u32>,
    /// Indices of prerequisite jobs, all smaller than this job's index.
    pub deps: Vec<usize>,
    /// Files whose content feeds the fingerprint.
    pub inputs: Vec<PathBuf>,
    pub config_digest: String,
}

/// Jobs in a valid execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dag {
    pub jobs: Vec<JobSpec>,
}

impl Dag {
    pub fn find(&self, id: &str) -> Option<usize> {
        self.jobs.iter().position(|j| j.id == id)
    }

    /// Indices of all jobs that depend on `i`, directly or not.
    pub fn dependents(&self, i: usize) -> Vec<usize> {
        let mut hit = vec![false; self.jobs.len()];
        hit[i] = true;
        let mut out = Vec::new();
        for (j, job) in self.jobs.iter().enumerate().skip(i + 1) {
            if job.deps.iter().any(|&d| hit[d]) {
                hit[j] = true;
                out.push(j);
            }
        }
        out
    }

    fn check_acyclic(&self) -> Result<()> {
        for (i, j) in self.jobs.iter().enumerate() {
            if let Some(&d) = j.deps.iter().find(|&&d| d >= i) {
                return Err(PipelineError::Plan(format!("{} depends on later job {}", j.id, self.jobs[d].id)));
            }
        }
        Ok(())
    }
}

/// Contiguous groups of blocks holding at most `cap` vectors each. A block
/// larger than `cap` forms a shard of its own.
pub fn shards(manifest: &BlockManifest, cap: u64) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    let mut size = 0u64;
    for b in &manifest.blocks {
        match out.last_mut() {
            Some(cur) if size + b.count <= cap => {
                cur.push(b.index);
                size += b.count;
            }
            _ => {
                out.push(vec![b.index]);
                size = b.count;
            }
        }
    }
    out
}

struct Builder<'a> {
    cfg: &'a PipelineConfig,
    dag: Dag,
    index: BTreeMap<String, usize>,
}

impl Builder<'_> {
    fn push(&mut self, mut job: JobSpec, deps: &[String]) -> usize {
        job.deps = deps.iter().map(|d| self.index[d]).collect();
        job.deps.sort_unstable();
        job.deps.dedup();
        job.config_digest = self.cfg.digest_of(job.stage.config_keys(self.cfg));
        let i = self.dag.jobs.len();
        self.index.insert(job.id.clone(), i);
        self.dag.jobs.push(job);
        i
    }
}

fn job(id: String, stage: Stage) -> JobSpec {
    JobSpec {
        id,
        stage,
        lang: None,
        pair: None,
        block: None,
        shard: None,
        deps: Vec::new(),
        inputs: Vec::new(),
        config_digest: String::new(),
    }
}

fn preprocess_job(cfg: &PipelineConfig, lang: &Lang) -> Result<JobSpec> {
    let mut j = job(format!("preprocess:{lang}"), Stage::Preprocess);
    j.lang = Some(lang.clone());
    if cfg.prepared {
        let input = BlockManifest::load(&cfg.input_dir, lang).map_err(|e| {
            PipelineError::Plan(format!("prepared input for {lang} is unreadable: {e}"))
        })?;
        j.inputs.push(manifest_path(&cfg.input_dir, lang));
        j.inputs.extend(input.blocks.iter().map(|b| block_path(&cfg.input_dir, lang, b.index)));
    } else {
        j.inputs.push(cfg.input_dir.join(format!("{lang}.txt")));
        if cfg.lid == super::LidMode::File {
            j.inputs.push(cfg.input_dir.join(format!("{lang}.lid.tsv")));
        }
    }
    Ok(j)
}

/// The text task alone: one preprocess job per language.
pub fn plan_text(cfg: &PipelineConfig) -> Result<Dag> {
    cfg.validate()?;
    let mut b = Builder { cfg, dag: Dag::default(), index: BTreeMap::new() };
    for lang in &cfg.langs {
        let j = preprocess_job(cfg, lang)?;
        b.push(j, &[]);
    }
    Ok(b.dag)
}

/// The full graph, given the corpus manifest of every language.
pub fn plan(cfg: &PipelineConfig, manifests: &BTreeMap<Lang, BlockManifest>) -> Result<Dag> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.work_dir);
    let corpus = layout.corpus_dir();
    let mut b = Builder { cfg, dag: Dag::default(), index: BTreeMap::new() };
    let get = |lang: &Lang| {
        manifests.get(lang).ok_or_else(|| PipelineError::Plan(format!("no corpus manifest for {lang}")))
    };
    let ivf = cfg.search == SearchKind::Ivf;
    let mut lang_shards: BTreeMap<Lang, Vec<Vec<u32>>> = BTreeMap::new();

    for lang in &cfg.langs {
        let m = get(lang)?;
        let pre = preprocess_job(cfg, lang)?;
        let pre_id = pre.id.clone();
        b.push(pre, &[]);
        let mut embeds = Vec::new();
        for e in &m.blocks {
            let mut j = job(format!("embed:{lang}:{:05}", e.index), Stage::Embed);
            j.lang = Some(lang.clone());
            j.block = Some(e.index);
            j.inputs.push(block_path(&corpus, lang, e.index));
            if cfg.prepared {
                j.inputs.push(crate::encoder::embedding_path(&cfg.input_dir, lang, e.index));
            }
            embeds.push(j.id.clone());
            b.push(j, &[pre_id.clone()]);
        }
        let groups = shards(m, cfg.shard_cap);
        if ivf {
            let mut t = job(format!("index-train:{lang}"), Stage::IndexTrain);
            t.lang = Some(lang.clone());
            t.inputs = m.blocks.iter().map(|e| layout.emb(lang, e.index)).collect();
            let train_id = t.id.clone();
            b.push(t, &embeds);
            for (s, group) in groups.iter().enumerate() {
                let mut adds = Vec::new();
                for &blk in group {
                    let mut a = job(format!("index-add:{lang}:{blk:05}"), Stage::IndexAdd);
                    a.lang = Some(lang.clone());
                    a.block = Some(blk);
                    a.inputs = vec![layout.trained_index(lang), layout.emb(lang, blk)];
                    adds.push(a.id.clone());
                    b.push(a, &[train_id.clone(), format!("embed:{lang}:{blk:05}")]);
                }
                let mut mg = job(format!("index-merge:{lang}:{s}"), Stage::IndexMerge);
                mg.lang = Some(lang.clone());
                mg.shard = Some(s as u32);
                mg.inputs = group.iter().map(|&blk| layout.index_part(lang, blk)).collect();
                b.push(mg, &adds);
            }
        }
        lang_shards.insert(lang.clone(), groups);
    }

    for (src, tgt) in &cfg.pairs {
        let pair = format!("{src}-{tgt}");
        let mut directions = vec![(Direction::Forward, src, tgt)];
        if cfg.mode == MiningMode::MaxStrategy {
            directions.push((Direction::Backward, tgt, src));
        }
        let mut mine_ids = Vec::new();
        let mut nbr_files = Vec::new();
        for (direction, query, target) in directions {
            let stage = if direction == Direction::Forward { Stage::MineFwd } else { Stage::MineBwd };
            let qm = get(query)?;
            for (s, group) in lang_shards[target].iter().enumerate() {
                let mut j = job(format!("{stage}:{pair}:{s}"), stage);
                j.pair = Some((src.clone(), tgt.clone()));
                j.shard = Some(s as u32);
                j.inputs = qm.blocks.iter().map(|e| layout.emb(query, e.index)).collect();
                let mut deps: Vec<String> = qm.blocks.iter().map(|e| format!("embed:{query}:{:05}", e.index)).collect();
                if ivf {
                    j.inputs.push(layout.index_shard(target, s as u32));
                    deps.push(format!("index-merge:{target}:{s}"));
                } else {
                    j.inputs.extend(group.iter().map(|&blk| layout.emb(target, blk)));
                    deps.extend(group.iter().map(|blk| format!("embed:{target}:{blk:05}")));
                }
                mine_ids.push(j.id.clone());
                nbr_files.push(layout.neighbors(src, tgt, direction, s as u32));
                b.push(j, &deps);
            }
        }
        let mut c = job(format!("mine-combine:{pair}"), Stage::MineCombine);
        c.pair = Some((src.clone(), tgt.clone()));
        c.inputs = nbr_files;
        c.inputs.push(manifest_path(&corpus, src));
        let combine_id = c.id.clone();
        b.push(c, &mine_ids);

        let mut a = job(format!("attach:{pair}"), Stage::Attach);
        a.pair = Some((src.clone(), tgt.clone()));
        a.inputs = vec![layout.pairs(src, tgt), manifest_path(&corpus, src), manifest_path(&corpus, tgt)];
        b.push(a, &[combine_id, format!("preprocess:{src}"), format!("preprocess:{tgt}")]);
    }
    b.dag.check_acyclic()?;
    Ok(b.dag)
}
