//! Sentence embeddings: the encoder interface, a deterministic test encoder,
//! and the `EMB1` block file format.
//!
//! Every block produced here has unit-norm rows, so downstream cosine
//! similarity is a plain dot product.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1"
//! 4       4     dim            (u32 LE)
//! 8       8     rows           (u64 LE)
//! 16      8     base_global_id (u64 LE)
//! 24      ...   rows * dim f32 LE, row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Lang;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 24;
/// Allowed deviation of a stored row norm from 1.
pub const NORM_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("encoder failed on sentence {index}: {reason}")]
    Encode { index: usize, reason: String },
    #[error("encoder returned {got} components for sentence {index}, expected {dim}")]
    EncoderDim { index: usize, got: usize, dim: usize },
    #[error("bad magic in {path}: expected EMB1")]
    Magic { path: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dim { expected: usize, found: usize },
    #[error("{path}: size {actual} bytes, expected {expected}")]
    Size { path: String, actual: u64, expected: u64 },
    #[error("row {row} is not finite")]
    NonFinite { row: usize },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNorm { row: usize },
    #[error("invalid embedding block: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Which corpus block an embedding block belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockOrigin {
    pub lang: Lang,
    pub block: u32,
}

/// Dense row-major matrix of sentence vectors. Row `r` has global id
/// `base_global_id + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub origin: Option<BlockOrigin>,
    dim: usize,
    base_global_id: u64,
    data: Vec<f32>,
}

fn normalize_row(row: &mut [f32]) -> bool {
    let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    let inv = 1.0 / norm;
    for x in row.iter_mut() {
        *x = (*x as f64 * inv) as f32;
    }
    true
}

impl EmbeddingBlock {
    /// Wrap existing data without touching it.
    pub fn from_raw(dim: usize, base_global_id: u64, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::Invalid("dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(EmbeddingError::Invalid(format!("{} values is not a multiple of dim {dim}", data.len())));
        }
        Ok(EmbeddingBlock { origin: None, dim, base_global_id, data })
    }

    /// Validate finiteness and scale every row to unit L2 norm.
    pub fn normalized(dim: usize, base_global_id: u64, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Self::from_raw(dim, base_global_id, data);
        }
        for (row, chunk) in data.chunks_mut(dim).enumerate() {
            if chunk.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite { row });
            }
            if !normalize_row(chunk) {
                return Err(EmbeddingError::ZeroNorm { row });
            }
        }
        Ok(EmbeddingBlock { origin: None, dim, base_global_id, data })
    }

    pub fn empty(dim: usize, base_global_id: u64) -> Self {
        EmbeddingBlock { origin: None, dim, base_global_id, data: Vec::new() }
    }

    pub fn with_origin(mut self, lang: Lang, block: u32) -> Self {
        self.origin = Some(BlockOrigin { lang, block });
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn base_global_id(&self) -> u64 {
        self.base_global_id
    }

    pub fn global_id(&self, row: usize) -> u64 {
        self.base_global_id + row as u64
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = (u64, &[f32])> + '_ {
        self.data.chunks_exact(self.dim).enumerate().map(|(r, v)| (self.base_global_id + r as u64, v))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Largest `| ||row|| - 1 |` over the block.
    pub fn max_norm_deviation(&self) -> f32 {
        self.data
            .chunks_exact(self.dim)
            .map(|r| (r.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt() - 1.0).abs() as f32)
            .fold(0.0, f32::max)
    }

    /// Rows `[start, end)` as a new block with the matching base id.
    pub fn slice_rows(&self, start: usize, end: usize) -> EmbeddingBlock {
        EmbeddingBlock {
            origin: self.origin.clone(),
            dim: self.dim,
            base_global_id: self.base_global_id + start as u64,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderDescriptor {
    pub name: String,
    pub dim: usize,
    pub deterministic: bool,
    pub version: String,
}

/// A sentence encoder. Implementations need not normalize; [`encode_batch`] does.
pub trait SentenceEncoder: Send + Sync {
    fn descriptor(&self) -> &EncoderDescriptor;
    fn encode(&self, sentence: &str) -> std::result::Result<Vec<f32>, String>;
}

/// Encode a list of sentences into a unit-normalized block.
pub fn encode_batch(
    sentences: &[String],
    encoder: &dyn SentenceEncoder,
    base_global_id: u64,
) -> Result<EmbeddingBlock> {
    let dim = encoder.descriptor().dim;
    if dim < 2 {
        return Err(EmbeddingError::Invalid(format!("encoder dim {dim} < 2")));
    }
    let rows: Vec<Vec<f32>> = sentences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let mut v = encoder.encode(s).map_err(|reason| EmbeddingError::Encode { index, reason })?;
            if v.len() != dim {
                return Err(EmbeddingError::EncoderDim { index, got: v.len(), dim });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::Encode { index, reason: "non-finite output".into() });
            }
            if !normalize_row(&mut v) {
                return Err(EmbeddingError::Encode { index, reason: "zero vector".into() });
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingBlock { origin: None, dim, base_global_id, data: rows.concat() })
}

/// Hashed character-trigram counts pushed through a seeded Gaussian random
/// projection. Strings sharing many trigrams get nearby vectors.
#[derive(Debug, Clone)]
pub struct TestEncoder {
    descriptor: EncoderDescriptor,
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

const PAD_START: char = '\u{2}';
const PAD_END: char = '\u{3}';

impl TestEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(EmbeddingError::Invalid(format!("test encoder dim {dim} < 2")));
        }
        Ok(TestEncoder {
            descriptor: EncoderDescriptor {
                name: "trigram-projection".into(),
                dim,
                deterministic: true,
                version: "1".into(),
            },
            seed,
        })
    }

    fn trigram_counts(sentence: &str) -> BTreeMap<u64, u32> {
        let mut chars = vec![PAD_START, PAD_START];
        chars.extend(sentence.chars());
        chars.extend([PAD_END, PAD_END]);
        let mut counts = BTreeMap::new();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            *counts.entry(fnv1a(&buf[..len])).or_insert(0) += 1;
        }
        counts
    }
}

impl SentenceEncoder for TestEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode(&self, sentence: &str) -> std::result::Result<Vec<f32>, String> {
        let dim = self.descriptor.dim;
        let seed_mix = splitmix64(self.seed);
        let mut acc = vec![0f64; dim];
        for (hash, count) in Self::trigram_counts(sentence) {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(hash ^ seed_mix));
            for a in acc.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *a += count as f64 * z;
            }
        }
        Ok(acc.into_iter().map(|x| x as f32).collect())
    }
}

/// `{lang}.{block:05}.emb`
pub fn embedding_file_name(lang: &Lang, block: u32) -> String {
    format!("{lang}.{block:05}.emb")
}

pub fn embedding_path(dir: &Path, lang: &Lang, block: u32) -> PathBuf {
    dir.join(embedding_file_name(lang, block))
}

fn origin_from_name(path: &Path) -> Option<BlockOrigin> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".emb")?;
    let (lang, block) = stem.split_once('.')?;
    if block.len() != 5 {
        return None;
    }
    Some(BlockOrigin { lang: Lang::new(lang).ok()?, block: block.parse().ok()? })
}

pub fn write_embeddings(block: &EmbeddingBlock, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(EMB_MAGIC)?;
    let dim = u32::try_from(block.dim).map_err(|_| EmbeddingError::Invalid("dim exceeds u32".into()))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(block.rows() as u64).to_le_bytes())?;
    w.write_all(&block.base_global_id.to_le_bytes())?;
    for x in &block.data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

/// Read an `EMB1` file. The origin is taken from the file name when it
/// follows `{lang}.{block:05}.emb`.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingBlock> {
    let bytes = fs::read(path)?;
    let p = path.display().to_string();
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::Size { path: p, actual: bytes.len() as u64, expected: HEADER_LEN as u64 });
    }
    if &bytes[..4] != EMB_MAGIC {
        return Err(EmbeddingError::Magic { path: p });
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let base = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if dim == 0 {
        return Err(EmbeddingError::Invalid(format!("{p}: dim is zero")));
    }
    let expected = (HEADER_LEN as u64).saturating_add(rows.saturating_mul(dim as u64).saturating_mul(4));
    if bytes.len() as u64 != expected {
        return Err(EmbeddingError::Size { path: p, actual: bytes.len() as u64, expected });
    }
    let data: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(EmbeddingBlock { origin: origin_from_name(path), dim, base_global_id: base, data })
}

/// Read an `EMB1` file and require a given dimension.
pub fn read_embeddings_with_dim(path: &Path, dim: usize) -> Result<EmbeddingBlock> {
    let b = read_embeddings(path)?;
    if b.dim != dim {
        return Err(EmbeddingError::Dim { expected: dim, found: b.dim });
    }
    Ok(b)
}

/// Import a headerless little-endian f32 matrix computed by an external
/// encoder. Rows are re-normalized.
pub fn import_embeddings(path: &Path, dim: usize, count: u64, base_global_id: u64) -> Result<EmbeddingBlock> {
    let bytes = fs::read(path)?;
    let expected = count.saturating_mul(dim as u64).saturating_mul(4);
    if bytes.len() as u64 != expected {
        return Err(EmbeddingError::Size { path: path.display().to_string(), actual: bytes.len() as u64, expected });
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    EmbeddingBlock::normalized(dim, base_global_id, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn dot(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn enc(dim: usize, seed: u64) -> TestEncoder {
        TestEncoder::new(dim, seed).unwrap()
    }

    #[test]
    fn empty_batch() {
        let b = encode_batch(&[], &enc(64, 0), 0).unwrap();
        assert_eq!((b.rows(), b.dim()), (0, 64));
    }

    #[test]
    fn single_row_is_unit() {
        let b = encode_batch(&["a".into()], &enc(64, 0), 0).unwrap();
        assert_eq!((b.rows(), b.dim()), (1, 64));
        assert!(b.max_norm_deviation() <= NORM_TOLERANCE);
        assert!(encode_batch(&["".into()], &enc(8, 0), 0).is_ok());
    }

    #[test]
    fn deterministic_across_runs() {
        let sents: Vec<String> = (0..100).map(|i| format!("sentence number {i} with text")).collect();
        let digest = |b: &EmbeddingBlock| {
            let mut h = Sha256::new();
            for x in b.as_slice() {
                h.update(x.to_le_bytes());
            }
            h.finalize()
        };
        let a = encode_batch(&sents, &enc(64, 9), 0).unwrap();
        let b = encode_batch(&sents, &enc(64, 9), 0).unwrap();
        assert_eq!(digest(&a), digest(&b));
    }

    #[test]
    fn similarity_is_graded() {
        let e = enc(64, 1);
        let b = encode_batch(&["abcdef".into(), "abcdef".into(), "abcdeg".into(), "zzzzzz".into()], &e, 0).unwrap();
        assert!((dot(b.row(0), b.row(1)) - 1.0).abs() < 1e-5);
        assert!(dot(b.row(0), b.row(2)) > dot(b.row(0), b.row(3)));
    }

    #[test]
    fn seeds_differ() {
        let a = encode_batch(&["hello".into()], &enc(32, 1), 0).unwrap();
        let b = encode_batch(&["hello".into()], &enc(32, 2), 0).unwrap();
        assert_ne!(a.as_slice(), b.as_slice());
    }

    struct Failing;
    impl SentenceEncoder for Failing {
        fn descriptor(&self) -> &EncoderDescriptor {
            static D: std::sync::OnceLock<EncoderDescriptor> = std::sync::OnceLock::new();
            D.get_or_init(|| EncoderDescriptor { name: "f".into(), dim: 4, deterministic: true, version: "0".into() })
        }
        fn encode(&self, s: &str) -> std::result::Result<Vec<f32>, String> {
            if s == "bad" {
                Err("boom".into())
            } else {
                Ok(vec![1.0, 0.0, 0.0, 0.0])
            }
        }
    }

    #[test]
    fn failure_reports_index() {
        let err = encode_batch(&["ok".into(), "ok".into(), "bad".into()], &Failing, 0).unwrap_err();
        assert!(matches!(err, EmbeddingError::Encode { index: 2, .. }), "{err}");
    }

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let lang = Lang::new("de").unwrap();
        let sents: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let block = encode_batch(&sents, &enc(16, 3), 40).unwrap().with_origin(lang.clone(), 4);
        let path = embedding_path(dir.path(), &lang, 4);
        write_embeddings(&block, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, block);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 24 + 10 * 16 * 4);
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_embeddings(&path), Err(EmbeddingError::Size { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_embeddings(&path), Err(EmbeddingError::Magic { .. })));
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_embeddings_with_dim(&path, 32), Err(EmbeddingError::Dim { expected: 32, found: 16 })));
    }

    fn raw_file(dir: &Path, values: &[f32]) -> PathBuf {
        let path = dir.join("raw.f32");
        let bytes: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn import_cases() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(import_embeddings(&p, 4, 2, 0).unwrap().rows(), 2);
        assert!(matches!(import_embeddings(&p, 4, 3, 0), Err(EmbeddingError::Size { .. })));

        let p = raw_file(dir.path(), &[1.0, 0.0, 0.0, 0.0, 0.0, f32::NAN, 0.0, 0.0]);
        assert!(matches!(import_embeddings(&p, 4, 2, 0), Err(EmbeddingError::NonFinite { row: 1 })));

        let p = raw_file(dir.path(), &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let b = import_embeddings(&p, 4, 2, 0).unwrap();
        assert!(b.max_norm_deviation() <= NORM_TOLERANCE);
        assert_eq!(b.row(0), &[1.0, 0.0, 0.0, 0.0]);
    }
}
