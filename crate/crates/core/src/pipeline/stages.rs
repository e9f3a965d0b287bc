//! The work behind each job kind. The command-line stage subcommands call
//! [`run_job`] directly, so they write exactly what a full run writes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Layout, LidMode, JobSpec, PipelineConfig, PipelineError, Result, SearchKind, Stage};
use crate::corpus::{
    block_path, dedup_block, dedup_global, filter_length, lid_filter, manifest_path, read_block,
    read_lid_predictions, split_sentences, write_block, BlockManifest, Lang, ScriptLid, SplitRegistry,
};
use crate::encoder::{
    encode_batch, read_embeddings_with_dim, write_embeddings, EmbeddingBlock, TestEncoder, NORM_TOLERANCE,
};
use crate::miner::{
    attach_text, compute_direction, forward_only_scores, margin_scores, merge_shard_lists, read_candidates,
    read_neighbors, read_pairs, select, write_bitext, write_candidates, write_neighbors, write_pairs, Direction,
    MarginCandidate, MarginStats, MinedPair, MiningMode, MiningStats, NeighborSet,
};
use crate::vindex::{
    merge_shards, read_index, train_index, write_index, FlatIndex, IndexShard, IvfSearcher, KnnIndex, TrainParams,
};

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Remove files in `dir` whose names start with `prefix` and end with `suffix`.
fn clear_matching(dir: &Path, prefix: &str, suffix: &str) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(prefix) && name.ends_with(suffix) {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

fn corpus_outputs(dir: &Path, m: &BlockManifest) -> Vec<PathBuf> {
    let mut out = vec![manifest_path(dir, &m.lang)];
    out.extend(m.blocks.iter().map(|b| block_path(dir, &m.lang, b.index)));
    out
}

fn load_manifest(layout: &Layout, lang: &Lang) -> Result<BlockManifest> {
    Ok(BlockManifest::load(&layout.corpus_dir(), lang)?)
}

fn preprocess(cfg: &PipelineConfig, layout: &Layout, lang: &Lang) -> Result<Vec<PathBuf>> {
    let corpus = layout.corpus_dir();
    fs::create_dir_all(&corpus)?;
    clear_matching(&corpus, &format!("{lang}."), ".txt")?;

    if cfg.prepared {
        let input = BlockManifest::load(&cfg.input_dir, lang)?;
        input.validate()?;
        let mut copy = BlockManifest::new(lang.clone(), input.block_capacity);
        for b in &input.blocks {
            let lines = read_block(&cfg.input_dir, &input, b.index)?;
            copy.blocks.push(write_block(&corpus, lang, b.index, &lines)?);
        }
        copy.save(&corpus)?;
        return Ok(corpus_outputs(&corpus, &copy));
    }

    let raw = fs::read_to_string(cfg.input_dir.join(format!("{lang}.txt")))?;
    let rules = SplitRegistry::builtin();
    let mut sentences = Vec::new();
    for paragraph in raw.lines() {
        // tabs would break the bitext columns
        sentences.extend(split_sentences(&paragraph.replace('\t', " "), lang, &rules)?);
    }
    let sentences = filter_length(sentences, cfg.max_chars);
    let sentences = match cfg.lid {
        LidMode::None => sentences,
        LidMode::Script => lid_filter(sentences, lang, &ScriptLid::new(Some(lang.clone())), cfg.min_conf)?,
        LidMode::File => {
            let predictions = read_lid_predictions(&cfg.input_dir.join(format!("{lang}.lid.tsv")))?;
            lid_filter(sentences, lang, &predictions, cfg.min_conf)?
        }
    };

    let staging = layout.text_dir(lang);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let mut local = BlockManifest::new(lang.clone(), cfg.block_capacity);
    for (i, chunk) in sentences.chunks(cfg.block_capacity as usize).enumerate() {
        let (kept, _) = dedup_block(chunk.to_vec());
        local.blocks.push(write_block(&staging, lang, i as u32, &kept)?);
    }
    local.save(&staging)?;
    let m = dedup_global(&local, &staging, &corpus)?;
    Ok(corpus_outputs(&corpus, &m))
}

fn embed(cfg: &PipelineConfig, layout: &Layout, lang: &Lang, block: u32) -> Result<Vec<PathBuf>> {
    let m = load_manifest(layout, lang)?;
    let base = m.base_global_id(block);
    let out = layout.emb(lang, block);
    ensure_parent(&out)?;
    let emb = if cfg.prepared {
        let entry = &m.blocks[block as usize];
        let given = read_embeddings_with_dim(&crate::encoder::embedding_path(&cfg.input_dir, lang, block), cfg.encoder_dim)?;
        if given.rows() as u64 != entry.count || given.base_global_id() != base {
            return Err(PipelineError::Job(format!(
                "prepared embeddings for {lang} block {block}: {} rows from id {}, corpus has {} rows from id {base}",
                given.rows(),
                given.base_global_id(),
                entry.count
            )));
        }
        if given.max_norm_deviation() > NORM_TOLERANCE {
            EmbeddingBlock::normalized(cfg.encoder_dim, base, given.into_vec())?
        } else {
            given
        }
    } else {
        let sentences = read_block(&layout.corpus_dir(), &m, block)?;
        let encoder = TestEncoder::new(cfg.encoder_dim, cfg.encoder_seed)?;
        encode_batch(&sentences, &encoder, base)?
    };
    write_embeddings(&emb, &out)?;
    Ok(vec![out])
}

fn read_emb(cfg: &PipelineConfig, layout: &Layout, lang: &Lang, block: u32) -> Result<EmbeddingBlock> {
    Ok(read_embeddings_with_dim(&layout.emb(lang, block), cfg.encoder_dim)?)
}

fn index_train(cfg: &PipelineConfig, layout: &Layout, lang: &Lang) -> Result<Vec<PathBuf>> {
    let m = load_manifest(layout, lang)?;
    let blocks: Vec<EmbeddingBlock> =
        m.blocks.iter().map(|b| read_emb(cfg, layout, lang, b.index)).collect::<Result<_>>()?;
    let total: usize = blocks.iter().map(|b| b.rows()).sum();
    let sample = if total <= cfg.train_sample {
        blocks
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picks = rand::seq::index::sample(&mut rng, total, cfg.train_sample).into_vec();
        picks.sort_unstable();
        let mut data = Vec::with_capacity(picks.len() * cfg.encoder_dim);
        let mut starts = Vec::with_capacity(blocks.len());
        let mut acc = 0;
        for b in &blocks {
            starts.push(acc);
            acc += b.rows();
        }
        for p in picks {
            let bi = starts.partition_point(|&s| s <= p) - 1;
            data.extend_from_slice(blocks[bi].row(p - starts[bi]));
        }
        vec![EmbeddingBlock::from_raw(cfg.encoder_dim, 0, data)?]
    };
    let refs: Vec<&EmbeddingBlock> = sample.iter().collect();
    let params = TrainParams::new(cfg.nlist, cfg.pq_m, cfg.rotation, cfg.seed);
    let (q, _) = train_index(&refs, &params)?;
    let out = layout.trained_index(lang);
    ensure_parent(&out)?;
    write_index(&IndexShard::new(Arc::new(q), false), &out)?;
    Ok(vec![out])
}

fn index_add(cfg: &PipelineConfig, layout: &Layout, lang: &Lang, block: u32) -> Result<Vec<PathBuf>> {
    let trained = read_index(&layout.trained_index(lang))?;
    let mut shard = IndexShard::new(trained.quantizers().clone(), cfg.keep_vectors);
    shard.add_block(&read_emb(cfg, layout, lang, block)?)?;
    let out = layout.index_part(lang, block);
    ensure_parent(&out)?;
    write_index(&shard, &out)?;
    Ok(vec![out])
}

fn index_merge(cfg: &PipelineConfig, layout: &Layout, lang: &Lang, shard: u32) -> Result<Vec<PathBuf>> {
    let m = load_manifest(layout, lang)?;
    let groups = super::shards(&m, cfg.shard_cap);
    let group = groups.get(shard as usize).ok_or_else(|| PipelineError::Job(format!("{lang} has no shard {shard}")))?;
    let parts: Vec<IndexShard> =
        group.iter().map(|&b| read_index(&layout.index_part(lang, b))).collect::<std::result::Result<_, _>>()?;
    let merged = merge_shards(parts)?;
    let out = layout.index_shard(lang, shard);
    write_index(&merged, &out)?;
    Ok(vec![out])
}

fn mine_direction(cfg: &PipelineConfig, layout: &Layout, pair: &(Lang, Lang), direction: Direction, shard: u32) -> Result<Vec<PathBuf>> {
    let (src, tgt) = pair;
    let (query, target) = match direction {
        Direction::Forward => (src, tgt),
        Direction::Backward => (tgt, src),
    };
    let qm = load_manifest(layout, query)?;
    let tm = load_manifest(layout, target)?;
    let groups = super::shards(&tm, cfg.shard_cap);
    let group = groups.get(shard as usize).ok_or_else(|| PipelineError::Job(format!("{target} has no shard {shard}")))?;

    let ivf_shard;
    let flat;
    let searcher;
    let index: &dyn KnnIndex = match cfg.search {
        SearchKind::Exact => {
            let blocks: Vec<EmbeddingBlock> =
                group.iter().map(|&b| read_emb(cfg, layout, target, b)).collect::<Result<_>>()?;
            flat = FlatIndex::from_blocks(cfg.encoder_dim, &blocks)?;
            &flat
        }
        SearchKind::Ivf => {
            ivf_shard = read_index(&layout.index_shard(target, shard))?;
            let nprobe = cfg.nprobe.ok_or_else(|| PipelineError::Config("search = ivf requires nprobe".into()))?;
            searcher = IvfSearcher::new(&ivf_shard, nprobe, cfg.refine)?;
            &searcher
        }
    };
    let mut set = NeighborSet::new(cfg.k, direction);
    for b in &qm.blocks {
        let queries = read_emb(cfg, layout, query, b.index)?;
        let context = format!("{direction} {src}-{tgt} block {} shard {shard}", b.index);
        set.lists.extend(compute_direction(&queries, index, cfg.k, direction, &context)?);
    }
    let out = layout.neighbors(src, tgt, direction, shard);
    ensure_parent(&out)?;
    write_neighbors(&set, &out)?;
    Ok(vec![out])
}

fn neighbor_files(cfg: &PipelineConfig, layout: &Layout, pair: &(Lang, Lang), direction: Direction) -> Result<Vec<NeighborSet>> {
    let (src, tgt) = pair;
    let target = if direction == Direction::Forward { tgt } else { src };
    let n = super::shards(&load_manifest(layout, target)?, cfg.shard_cap).len();
    (0..n as u32).map(|s| Ok(read_neighbors(&layout.neighbors(src, tgt, direction, s))?)).collect()
}

fn combine(cfg: &PipelineConfig, layout: &Layout, pair: &(Lang, Lang)) -> Result<Vec<PathBuf>> {
    let (src, tgt) = pair;
    let dir = layout.mine_dir(src, tgt);
    fs::create_dir_all(&dir)?;
    clear_matching(&dir, "cand.", ".cnd")?;
    let mut outputs = Vec::new();
    let mut stats = MarginStats::default();
    let groups: Vec<Vec<MarginCandidate>> = match cfg.mode {
        MiningMode::MaxStrategy => {
            let fwd = merge_shard_lists(&neighbor_files(cfg, layout, pair, Direction::Forward)?)?;
            let bwd = merge_shard_lists(&neighbor_files(cfg, layout, pair, Direction::Backward)?)?;
            let (candidates, s) = margin_scores(&fwd, &bwd)?;
            stats = s;
            // one candidate file per source block
            let sm = load_manifest(layout, src)?;
            let mut per_block: Vec<Vec<MarginCandidate>> = vec![Vec::new(); sm.blocks.len()];
            for c in &candidates {
                let (b, _) = sm.locate(c.src_id).ok_or_else(|| PipelineError::Job(format!("source id {} outside corpus", c.src_id)))?;
                per_block[b as usize].push(*c);
            }
            for (b, cands) in per_block.iter().enumerate() {
                let p = dir.join(format!("cand.{b:05}.cnd"));
                write_candidates(cands, &p)?;
                outputs.push(p);
            }
            vec![candidates]
        }
        MiningMode::ForwardOnly => {
            let mut groups = Vec::new();
            for (s, set) in neighbor_files(cfg, layout, pair, Direction::Forward)?.iter().enumerate() {
                let (candidates, st) = forward_only_scores(set)?;
                stats.add(&st);
                let p = dir.join(format!("cand.fwd.{s}.cnd"));
                write_candidates(&candidates, &p)?;
                outputs.push(p);
                groups.push(candidates);
            }
            groups
        }
    };
    let mining = cfg.mining();
    let (accepted, ranked) = select(groups, cfg.mode, cfg.threshold);
    let pairs_path = layout.pairs(src, tgt);
    write_pairs(&accepted, &mut fs::File::create(&pairs_path)?)?;
    let stats_path = layout.stats(src, tgt);
    MiningStats::new(&mining, stats, &ranked, accepted.len() as u64).save(&stats_path)?;
    outputs.push(pairs_path);
    outputs.push(stats_path);
    Ok(outputs)
}

fn attach(layout: &Layout, pair: &(Lang, Lang)) -> Result<Vec<PathBuf>> {
    let (src, tgt) = pair;
    let corpus = layout.corpus_dir();
    let sm = load_manifest(layout, src)?;
    let tm = load_manifest(layout, tgt)?;
    let pairs = read_pairs(&layout.pairs(src, tgt))?;
    let aligned = attach_text(&pairs, (&corpus, &sm), (&corpus, &tm))?;
    let out = layout.bitext(src, tgt);
    ensure_parent(&out)?;
    write_bitext(&aligned, &mut fs::File::create(&out)?)?;
    Ok(vec![out])
}

/// Run one job and return the files it wrote.
pub fn run_job(job: &JobSpec, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&cfg.work_dir);
    let missing = |what: &str| PipelineError::Job(format!("{}: job has no {what}", job.id));
    let lang = || job.lang.as_ref().ok_or_else(|| missing("language"));
    let pair = || job.pair.as_ref().ok_or_else(|| missing("language pair"));
    let block = || job.block.ok_or_else(|| missing("block"));
    let shard = || job.shard.ok_or_else(|| missing("shard"));
    match job.stage {
        Stage::Preprocess => preprocess(cfg, &layout, lang()?),
        Stage::Embed => embed(cfg, &layout, lang()?, block()?),
        Stage::IndexTrain => index_train(cfg, &layout, lang()?),
        Stage::IndexAdd => index_add(cfg, &layout, lang()?, block()?),
        Stage::IndexMerge => index_merge(cfg, &layout, lang()?, shard()?),
        Stage::MineFwd => mine_direction(cfg, &layout, pair()?, Direction::Forward, shard()?),
        Stage::MineBwd => mine_direction(cfg, &layout, pair()?, Direction::Backward, shard()?),
        Stage::MineCombine => combine(cfg, &layout, pair()?),
        Stage::Attach => attach(&layout, pair()?),
    }
}

/// Re-select pairs from candidate files. In forward-only mode each file is
/// one target shard; otherwise all files are pooled.
pub fn filter_candidates(inputs: &[PathBuf], mode: MiningMode, threshold: f64) -> Result<Vec<MinedPair>> {
    let groups: Vec<Vec<MarginCandidate>> = inputs.iter().map(|p| read_candidates(p)).collect::<std::result::Result<_, _>>()?;
    Ok(select(groups, mode, threshold).0)
}
