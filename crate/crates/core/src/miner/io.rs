//! Binary neighbor and candidate files, and the id-level pairs TSV.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! NBR1: "NBR1" u32 k u8 direction u64 count
//!       count times: u64 query_id u32 len [u64 id, f32 sim] * len
//! CND1: "CND1" then records of u64 src_id u64 tgt_id f32 margin u8 direction
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Direction, MarginCandidate, MinedPair, MinerError, NeighborList, NeighborSet, Result};

pub const NEIGHBOR_MAGIC: &[u8; 4] = b"NBR1";
pub const CANDIDATE_MAGIC: &[u8; 4] = b"CND1";
const CANDIDATE_RECORD: usize = 8 + 8 + 4 + 1;

fn format_err(path: &Path, reason: impl Into<String>) -> MinerError {
    MinerError::Format { path: path.display().to_string(), reason: reason.into() }
}

fn finish(w: BufWriter<fs::File>) -> Result<()> {
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

pub fn write_neighbors(set: &NeighborSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(NEIGHBOR_MAGIC)?;
    w.write_all(&(set.k as u32).to_le_bytes())?;
    w.write_all(&[set.direction.code()])?;
    w.write_all(&(set.lists.len() as u64).to_le_bytes())?;
    for l in &set.lists {
        w.write_all(&l.query_id.to_le_bytes())?;
        w.write_all(&(l.neighbor_ids.len() as u32).to_le_bytes())?;
        for (id, s) in l.neighbor_ids.iter().zip(&l.sims) {
            w.write_all(&id.to_le_bytes())?;
            w.write_all(&s.to_le_bytes())?;
        }
    }
    finish(w)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn direction(&mut self) -> Result<Direction> {
        let c = self.take(1)?[0];
        Direction::from_code(c).ok_or_else(|| format_err(self.path, format!("bad direction byte {c}")))
    }
}

pub fn read_neighbors(path: &Path) -> Result<NeighborSet> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(4)? != NEIGHBOR_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let k = r.u32()? as usize;
    let direction = r.direction()?;
    let count = r.u64()?;
    let mut lists = Vec::new();
    for _ in 0..count {
        let query_id = r.u64()?;
        let len = r.u32()? as usize;
        let mut neighbor_ids = Vec::with_capacity(len.min(k));
        let mut sims = Vec::with_capacity(len.min(k));
        for _ in 0..len {
            neighbor_ids.push(r.u64()?);
            sims.push(r.f32()?);
        }
        let l = NeighborList { query_id, neighbor_ids, sims, direction };
        l.validate(k).map_err(|e| format_err(path, e.to_string()))?;
        lists.push(l);
    }
    if r.pos != buf.len() {
        return Err(format_err(path, "trailing bytes"));
    }
    Ok(NeighborSet { k, direction, lists })
}

pub fn write_candidates(candidates: &[MarginCandidate], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CANDIDATE_MAGIC)?;
    for c in candidates {
        w.write_all(&c.src_id.to_le_bytes())?;
        w.write_all(&c.tgt_id.to_le_bytes())?;
        w.write_all(&c.margin.to_le_bytes())?;
        w.write_all(&[c.direction.code()])?;
    }
    finish(w)
}

pub fn read_candidates(path: &Path) -> Result<Vec<MarginCandidate>> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(4)? != CANDIDATE_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    if (buf.len() - 4) % CANDIDATE_RECORD != 0 {
        return Err(format_err(path, "truncated record"));
    }
    let mut out = Vec::with_capacity((buf.len() - 4) / CANDIDATE_RECORD);
    while r.pos < buf.len() {
        let src_id = r.u64()?;
        let tgt_id = r.u64()?;
        let margin = r.f32()?;
        let direction = r.direction()?;
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(format_err(path, format!("invalid margin {margin}")));
        }
        out.push(MarginCandidate { src_id, tgt_id, margin, direction });
    }
    Ok(out)
}

/// `margin<TAB>src_id<TAB>tgt_id`, margin with six decimals.
pub fn write_pairs(pairs: &[MinedPair], out: &mut dyn Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    for p in pairs {
        writeln!(w, "{:.6}\t{}\t{}", p.margin, p.src_id, p.tgt_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<MinedPair>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = || format_err(path, format!("line {}: expected margin, src_id, tgt_id", n + 1));
        let mut f = line.split('\t');
        let (Some(m), Some(s), Some(t), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        out.push(MinedPair {
            margin: m.parse().map_err(|_| bad())?,
            src_id: s.parse().map_err(|_| bad())?,
            tgt_id: t.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
