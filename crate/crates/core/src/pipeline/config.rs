use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::corpus::{Lang, DEFAULT_MAX_CHARS, DEFAULT_MIN_CONF};
use crate::miner::{MiningConfig, MiningMode, DEFAULT_K, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchKind {
    Exact,
    Ivf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LidMode {
    /// Unicode-script heuristic.
    Script,
    /// `{lang}.lid.tsv` next to the raw input, one row per sentence after
    /// splitting and length filtering.
    File,
    None,
}

/// Every tunable of a run. Keys are shared by the config file and the
/// command line (`block_capacity` in the file, `--block-capacity` as a flag).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    pub input_dir: PathBuf,
    pub langs: Vec<Lang>,
    pub pairs: Vec<(Lang, Lang)>,
    pub prepared: bool,
    pub block_capacity: u64,
    pub max_chars: usize,
    pub min_conf: f32,
    pub lid: LidMode,
    pub encoder_dim: usize,
    pub encoder_seed: u64,
    pub search: SearchKind,
    pub nlist: usize,
    pub pq_m: usize,
    pub rotation: bool,
    pub train_sample: usize,
    pub seed: u64,
    pub nprobe: Option<usize>,
    pub refine: bool,
    pub keep_vectors: bool,
    pub shard_cap: u64,
    pub k: usize,
    pub threshold: f64,
    pub mode: MiningMode,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            work_dir: PathBuf::from("work"),
            input_dir: PathBuf::from("input"),
            langs: Vec::new(),
            pairs: Vec::new(),
            prepared: false,
            block_capacity: 10_000,
            max_chars: DEFAULT_MAX_CHARS,
            min_conf: DEFAULT_MIN_CONF,
            lid: LidMode::Script,
            encoder_dim: 64,
            encoder_seed: 0,
            search: SearchKind::Exact,
            nlist: 256,
            pq_m: 16,
            rotation: false,
            train_sample: 100_000,
            seed: 0,
            nprobe: None,
            refine: true,
            keep_vectors: true,
            shard_cap: 1_000_000,
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            mode: MiningMode::MaxStrategy,
            workers: 1,
        }
    }
}

/// All recognised keys, in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "work_dir",
    "input_dir",
    "langs",
    "pairs",
    "prepared",
    "block_capacity",
    "max_chars",
    "min_conf",
    "lid",
    "encoder_dim",
    "encoder_seed",
    "search",
    "nlist",
    "pq_m",
    "rotation",
    "train_sample",
    "seed",
    "nprobe",
    "refine",
    "keep_vectors",
    "shard_cap",
    "k",
    "threshold",
    "mode",
    "workers",
];

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("{key} = {value:?}: {why}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl PipelineConfig {
    /// Set one key from its textual value. Dashes in `key` are read as
    /// underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let key = key.as_str();
        let value = value.trim();
        match key {
            "work_dir" => self.work_dir = PathBuf::from(value),
            "input_dir" => self.input_dir = PathBuf::from(value),
            "langs" => {
                self.langs = list(value).map(|l| Lang::new(l).map_err(|e| bad(key, value, e))).collect::<Result<_>>()?
            }
            "pairs" => {
                self.pairs = list(value)
                    .map(|p| {
                        let (a, b) = p.split_once('-').ok_or_else(|| bad(key, value, "pairs look like src-tgt"))?;
                        Ok((Lang::new(a).map_err(|e| bad(key, value, e))?, Lang::new(b).map_err(|e| bad(key, value, e))?))
                    })
                    .collect::<Result<_>>()?
            }
            "prepared" => self.prepared = parse_bool(key, value)?,
            "block_capacity" => self.block_capacity = parse(key, value)?,
            "max_chars" => self.max_chars = parse(key, value)?,
            "min_conf" => self.min_conf = parse(key, value)?,
            "lid" => {
                self.lid = match value {
                    "script" => LidMode::Script,
                    "file" => LidMode::File,
                    "none" => LidMode::None,
                    _ => return Err(bad(key, value, "expected script, file or none")),
                }
            }
            "encoder_dim" => self.encoder_dim = parse(key, value)?,
            "encoder_seed" => self.encoder_seed = parse(key, value)?,
            "search" => {
                self.search = match value {
                    "exact" => SearchKind::Exact,
                    "ivf" => SearchKind::Ivf,
                    _ => return Err(bad(key, value, "expected exact or ivf")),
                }
            }
            "nlist" => self.nlist = parse(key, value)?,
            "pq_m" => self.pq_m = parse(key, value)?,
            "rotation" => self.rotation = parse_bool(key, value)?,
            "train_sample" => self.train_sample = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "nprobe" => self.nprobe = Some(parse(key, value)?),
            "refine" => self.refine = parse_bool(key, value)?,
            "keep_vectors" => self.keep_vectors = parse_bool(key, value)?,
            "shard_cap" => self.shard_cap = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical textual value of a key.
    pub fn get(&self, key: &str) -> Option<String> {
        let join = |v: &[Lang]| v.iter().map(Lang::to_string).collect::<Vec<_>>().join(",");
        Some(match key {
            "work_dir" => self.work_dir.display().to_string(),
            "input_dir" => self.input_dir.display().to_string(),
            "langs" => join(&self.langs),
            "pairs" => self.pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(","),
            "prepared" => self.prepared.to_string(),
            "block_capacity" => self.block_capacity.to_string(),
            "max_chars" => self.max_chars.to_string(),
            "min_conf" => self.min_conf.to_string(),
            "lid" => match self.lid {
                LidMode::Script => "script",
                LidMode::File => "file",
                LidMode::None => "none",
            }
            .to_string(),
            "encoder_dim" => self.encoder_dim.to_string(),
            "encoder_seed" => self.encoder_seed.to_string(),
            "search" => match self.search {
                SearchKind::Exact => "exact",
                SearchKind::Ivf => "ivf",
            }
            .to_string(),
            "nlist" => self.nlist.to_string(),
            "pq_m" => self.pq_m.to_string(),
            "rotation" => self.rotation.to_string(),
            "train_sample" => self.train_sample.to_string(),
            "seed" => self.seed.to_string(),
            "nprobe" => self.nprobe.map_or_else(String::new, |n| n.to_string()),
            "refine" => self.refine.to_string(),
            "keep_vectors" => self.keep_vectors.to_string(),
            "shard_cap" => self.shard_cap.to_string(),
            "k" => self.k.to_string(),
            "threshold" => self.threshold.to_string(),
            "mode" => self.mode.to_string(),
            "workers" => self.workers.to_string(),
            _ => return None,
        })
    }

    /// Parse `key = value` lines. `#` starts a comment; blank lines are
    /// ignored; unknown keys are errors.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim().trim_matches('"'))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// The whole config as `key = value` lines in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let v = self.get(key).unwrap();
            if key == &"nprobe" && v.is_empty() {
                continue;
            }
            writeln!(out, "{key} = {v}").unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.block_capacity == 0 {
            return fail("block_capacity must be positive");
        }
        if self.encoder_dim == 0 {
            return fail("encoder_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_conf) {
            return fail("min_conf must lie in [0, 1]");
        }
        if self.shard_cap == 0 {
            return fail("shard_cap must be positive");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        self.mining().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for (a, b) in &self.pairs {
            if a == b {
                return Err(PipelineError::Config(format!("pair {a}-{b} mines a language against itself")));
            }
            for l in [a, b] {
                if !self.langs.contains(l) {
                    return Err(PipelineError::Config(format!("pair {a}-{b} references {l}, which is not in langs")));
                }
            }
        }
        if self.search == SearchKind::Ivf {
            match self.nprobe {
                None => return fail("search = ivf requires nprobe"),
                Some(n) if n == 0 || n > self.nlist => {
                    return Err(PipelineError::Config(format!("nprobe {n} outside 1..={}", self.nlist)))
                }
                _ => {}
            }
            if self.nlist == 0 || self.pq_m == 0 || self.encoder_dim % self.pq_m != 0 {
                return fail("ivf needs nlist >= 1 and pq_m dividing encoder_dim");
            }
        }
        Ok(())
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig { k: self.k, threshold: self.threshold, mode: self.mode }
    }

    /// SHA-256 over the canonical values of `keys`.
    pub fn digest_of(&self, keys: &[&str]) -> String {
        let mut h = Sha256::new();
        for key in keys {
            h.update(key.as_bytes());
            h.update(b"=");
            h.update(self.get(key).expect("known key").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
