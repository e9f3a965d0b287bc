//! Sentence block files and their JSON manifest.
//!
//! A block is `{lang}.{block:05}.txt`: UTF-8, one sentence per line, LF
//! terminated. The manifest `{lang}.manifest.json` lists each block's row count
//! and the SHA-256 of its bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Lang, Result, SentenceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub index: u32,
    pub count: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockManifest {
    pub lang: Lang,
    pub block_capacity: u64,
    pub blocks: Vec<BlockEntry>,
}

pub fn block_file_name(lang: &Lang, index: u32) -> String {
    format!("{lang}.{index:05}.txt")
}

pub fn block_path(dir: &Path, lang: &Lang, index: u32) -> PathBuf {
    dir.join(block_file_name(lang, index))
}

pub fn manifest_path(dir: &Path, lang: &Lang) -> PathBuf {
    dir.join(format!("{lang}.manifest.json"))
}

impl BlockManifest {
    pub fn new(lang: Lang, block_capacity: u64) -> Self {
        BlockManifest { lang, block_capacity, blocks: Vec::new() }
    }

    pub fn sentence_count(&self) -> u64 {
        self.blocks.iter().map(|b| b.count).sum()
    }

    /// A block holding fewer rows than the capacity.
    pub fn is_partial(&self, index: u32) -> bool {
        self.blocks.get(index as usize).is_some_and(|b| b.count < self.block_capacity)
    }

    pub fn base_global_id(&self, index: u32) -> u64 {
        index as u64 * self.block_capacity
    }

    /// Map a global id to `(block, row)`, checking it against the block counts.
    pub fn locate(&self, global_id: u64) -> Option<(u32, u64)> {
        let block = global_id / self.block_capacity;
        let row = global_id % self.block_capacity;
        let entry = self.blocks.get(usize::try_from(block).ok()?)?;
        (row < entry.count).then_some((block as u32, row))
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_capacity == 0 {
            return Err(CorpusError::Manifest("block_capacity must be positive".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.index as usize != i {
                return Err(CorpusError::Manifest(format!("block {i} is listed with index {}", b.index)));
            }
            if b.count > self.block_capacity {
                return Err(CorpusError::Manifest(format!(
                    "block {i} holds {} rows, capacity is {}",
                    b.count, self.block_capacity
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = manifest_path(dir, &self.lang);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(&path, json)?;
        Ok(path)
    }

    pub fn load(dir: &Path, lang: &Lang) -> Result<Self> {
        Self::load_file(&manifest_path(dir, lang))
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let m: BlockManifest = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Write one block file and return its manifest entry.
pub fn write_block(dir: &Path, lang: &Lang, index: u32, sentences: &[String]) -> Result<BlockEntry> {
    let mut bytes = Vec::with_capacity(sentences.iter().map(|s| s.len() + 1).sum());
    for s in sentences {
        if s.contains('\n') || s.contains('\r') {
            return Err(CorpusError::Newline);
        }
        bytes.extend_from_slice(s.as_bytes());
        bytes.push(b'\n');
    }
    fs::write(block_path(dir, lang, index), &bytes)?;
    Ok(BlockEntry { index, count: sentences.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) })
}

/// Read a block, checking its digest and row count against the manifest.
pub fn read_block(dir: &Path, manifest: &BlockManifest, index: u32) -> Result<Vec<String>> {
    let lang = &manifest.lang;
    let entry = manifest.blocks.get(index as usize).ok_or_else(|| CorpusError::BlockMismatch {
        lang: lang.to_string(),
        index,
        reason: "not listed in manifest".into(),
    })?;
    let path = block_path(dir, lang, index);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            CorpusError::MissingBlock { lang: lang.to_string(), index, path: path.display().to_string() }
        }
        _ => CorpusError::Io(e),
    })?;
    let mismatch = |reason: String| CorpusError::BlockMismatch { lang: lang.to_string(), index, reason };
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != entry.sha256 {
        return Err(mismatch(format!("sha256 {digest} != {}", entry.sha256)));
    }
    let text = String::from_utf8(bytes).map_err(|_| mismatch("not valid UTF-8".into()))?;
    let lines: Vec<String> = text.lines().map(str::to_string).collect();
    if lines.len() as u64 != entry.count {
        return Err(mismatch(format!("{} lines, manifest says {}", lines.len(), entry.count)));
    }
    Ok(lines)
}

/// All records of a corpus in global-id order.
pub fn read_records(dir: &Path, manifest: &BlockManifest) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::with_capacity(manifest.sentence_count() as usize);
    for b in &manifest.blocks {
        let base = manifest.base_global_id(b.index);
        for (row, text) in read_block(dir, manifest, b.index)?.into_iter().enumerate() {
            out.push(SentenceRecord { global_id: base + row as u64, text, lang: manifest.lang.clone(), block: b.index });
        }
    }
    Ok(out)
}

/// Packs a sentence stream into consecutive full blocks.
pub struct BlockWriter<'a> {
    dir: &'a Path,
    manifest: BlockManifest,
    pending: Vec<String>,
}

impl<'a> BlockWriter<'a> {
    pub fn new(dir: &'a Path, lang: Lang, block_capacity: u64) -> Self {
        BlockWriter { dir, manifest: BlockManifest::new(lang, block_capacity), pending: Vec::new() }
    }

    pub fn push(&mut self, sentence: String) -> Result<()> {
        self.pending.push(sentence);
        if self.pending.len() as u64 == self.manifest.block_capacity {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let index = self.manifest.blocks.len() as u32;
        let entry = write_block(self.dir, &self.manifest.lang, index, &self.pending)?;
        self.manifest.blocks.push(entry);
        self.pending.clear();
        Ok(())
    }

    /// Write the last partial block (if any) and the manifest.
    pub fn finish(mut self) -> Result<BlockManifest> {
        if !self.pending.is_empty() {
            self.flush()?;
        }
        self.manifest.save(self.dir)?;
        Ok(self.manifest)
    }
}

/// Write `sentences` as full blocks plus manifest.
pub fn build_blocks(
    dir: &Path,
    lang: Lang,
    block_capacity: u64,
    sentences: impl IntoIterator<Item = String>,
) -> Result<BlockManifest> {
    let mut w = BlockWriter::new(dir, lang, block_capacity);
    for s in sentences {
        w.push(s)?;
    }
    w.finish()
}
