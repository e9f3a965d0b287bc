//! `IVF1` index files.
//!
//! Little-endian layout:
//!
//! ```text
//! "IVF1" u32 version u32 dim u32 nlist u32 m u8 has_rotation
//! [f32; dim*dim]            rotation, row-major, if has_rotation
//! [f32; nlist*dim]          coarse centroids
//! [f32; m*256*(dim/m)]      PQ codebooks
//! nlist times: u64 len, [u64; len] ids, [u8; len*m] codes
//! u8 has_vectors
//! if has_vectors, nlist times: [f32; len*dim]
//! ```
//!
//! A trained-but-empty index is the same file with every list empty.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::ivf::{CoarseQuantizer, IndexShard, InvertedList, TrainedQuantizers};
use super::pq::{PqCodebook, Rotation, PQ_CODES};
use super::{IndexError, Result};
use crate::corpus::Lang;

pub const IVF_MAGIC: &[u8; 4] = b"IVF1";
pub const IVF_VERSION: u32 = 1;

pub fn index_file_name(lang: &Lang, shard: u32) -> String {
    format!("{lang}.{shard}.idx")
}

fn put_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_index(shard: &IndexShard, path: &Path) -> Result<()> {
    let q = shard.quantizers();
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(IVF_MAGIC)?;
    w.write_all(&IVF_VERSION.to_le_bytes())?;
    w.write_all(&(q.dim() as u32).to_le_bytes())?;
    w.write_all(&(q.nlist() as u32).to_le_bytes())?;
    w.write_all(&(q.m() as u32).to_le_bytes())?;
    match &q.rotation.matrix {
        Some(m) => {
            w.write_all(&[1])?;
            put_f32s(&mut w, m)?;
        }
        None => w.write_all(&[0])?,
    }
    put_f32s(&mut w, &q.coarse.centroids)?;
    put_f32s(&mut w, &q.pq.codebooks)?;
    for l in shard.lists() {
        w.write_all(&(l.ids.len() as u64).to_le_bytes())?;
        for id in &l.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        w.write_all(&l.codes)?;
    }
    w.write_all(&[shard.keeps_vectors() as u8])?;
    if shard.keeps_vectors() {
        for l in shard.lists() {
            put_f32s(&mut w, &l.vectors)?;
        }
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> IndexError {
        IndexError::Format { path: self.path.display().to_string(), reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_index(path: &Path) -> Result<IndexShard> {
    let buf = fs::read(path)?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(4, "magic")? != IVF_MAGIC {
        return Err(c.err("bad magic"));
    }
    let version = c.u32("version")?;
    if version != IVF_VERSION {
        return Err(c.err(format!("unsupported version {version}")));
    }
    let dim = c.u32("dim")? as usize;
    let nlist = c.u32("nlist")? as usize;
    let m = c.u32("m")? as usize;
    if dim == 0 || nlist == 0 || m == 0 || dim % m != 0 {
        return Err(c.err(format!("invalid shape dim={dim} nlist={nlist} m={m}")));
    }
    let rotation = match c.u8("rotation flag")? {
        0 => Rotation::identity(dim),
        1 => Rotation { dim, matrix: Some(c.f32s(dim * dim, "rotation")?) },
        f => return Err(c.err(format!("bad rotation flag {f}"))),
    };
    let centroids = c.f32s(nlist * dim, "centroids")?;
    let codebooks = c.f32s(m * PQ_CODES * (dim / m), "codebooks")?;
    let quantizers = TrainedQuantizers {
        rotation,
        coarse: CoarseQuantizer { dim, nlist, centroids },
        pq: PqCodebook { dim, m, sub_dim: dim / m, codebooks },
    };
    let mut lists = Vec::with_capacity(nlist);
    for _ in 0..nlist {
        let len = c.u64("list length")? as usize;
        let ids = c
            .take(len.checked_mul(8).ok_or_else(|| c.err("size overflow"))?, "ids")?
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let codes = c.take(len.checked_mul(m).ok_or_else(|| c.err("size overflow"))?, "codes")?.to_vec();
        lists.push(InvertedList { ids, codes, vectors: Vec::new(), errors: Vec::new() });
    }
    let keep_vectors = match c.u8("vector flag")? {
        0 => false,
        1 => true,
        f => return Err(c.err(format!("bad vector flag {f}"))),
    };
    if keep_vectors {
        for l in &mut lists {
            l.vectors = c.f32s(l.ids.len() * dim, "vectors")?;
        }
    }
    if c.pos != buf.len() {
        return Err(c.err(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    IndexShard::from_parts(Arc::new(quantizers), lists, keep_vectors)
}
