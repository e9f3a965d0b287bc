use std::collections::HashSet;
use std::path::Path;

use super::store::{read_block, BlockManifest, BlockWriter};
use super::Result;

/// Remove later byte-identical repeats; returns survivors in first-occurrence
/// order and the number removed.
pub fn dedup_block(block: Vec<String>) -> (Vec<String>, usize) {
    let n = block.len();
    let mut seen: HashSet<String> = HashSet::with_capacity(n);
    let kept: Vec<String> = block.into_iter().filter(|s| seen.insert(s.clone())).collect();
    let removed = n - kept.len();
    (kept, removed)
}

/// Cross-block deduplication of one language.
///
/// Blocks are scanned in `(block, row)` order and the first occurrence of each
/// sentence survives. Survivors are repacked into full blocks under `out_dir`
/// so global ids are contiguous from zero.
pub fn dedup_global(manifest: &BlockManifest, in_dir: &Path, out_dir: &Path) -> Result<BlockManifest> {
    manifest.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut writer = BlockWriter::new(out_dir, manifest.lang.clone(), manifest.block_capacity);
    for b in &manifest.blocks {
        for s in read_block(in_dir, manifest, b.index)? {
            if !seen.contains(&s) {
                seen.insert(s.clone());
                writer.push(s)?;
            }
        }
    }
    writer.finish()
}
