use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{AlignedPair, MinedPair, MinerError, Result};
use crate::corpus::{read_block, BlockManifest};

/// Sentence lookup by global id, loading each block on first use.
struct TextSide<'a> {
    dir: &'a Path,
    manifest: &'a BlockManifest,
    blocks: HashMap<u32, Vec<String>>,
}

impl TextSide<'_> {
    fn text(&mut self, id: u64) -> Result<String> {
        let (block, row) = self
            .manifest
            .locate(id)
            .ok_or_else(|| MinerError::DanglingId { id, lang: self.manifest.lang.to_string() })?;
        if !self.blocks.contains_key(&block) {
            let lines = read_block(self.dir, self.manifest, block)?;
            self.blocks.insert(block, lines);
        }
        Ok(self.blocks[&block][row as usize].clone())
    }
}

/// Resolve both ids of every pair to their sentences.
pub fn attach_text(
    pairs: &[MinedPair],
    src: (&Path, &BlockManifest),
    tgt: (&Path, &BlockManifest),
) -> Result<Vec<AlignedPair>> {
    let mut s = TextSide { dir: src.0, manifest: src.1, blocks: HashMap::new() };
    let mut t = TextSide { dir: tgt.0, manifest: tgt.1, blocks: HashMap::new() };
    pairs
        .iter()
        .map(|p| {
            Ok(AlignedPair {
                margin: p.margin,
                src_id: p.src_id,
                tgt_id: p.tgt_id,
                src_text: s.text(p.src_id)?,
                tgt_text: t.text(p.tgt_id)?,
            })
        })
        .collect()
}

/// `margin<TAB>src_text<TAB>tgt_text`, margin with six decimals.
pub fn write_bitext(pairs: &[AlignedPair], out: &mut dyn Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    for p in pairs {
        writeln!(w, "{:.6}\t{}\t{}", p.margin, p.src_text, p.tgt_text)?;
    }
    w.flush()?;
    Ok(())
}
