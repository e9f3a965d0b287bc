//! Monolingual corpus preparation.
//!
//! Paragraphs go in, per-language sets of unique, language-verified sentences
//! come out, packed into fixed-capacity block files with a JSON manifest:
//!
//! ```text
//! paragraphs -> split_sentences -> filter_length -> lid_filter -> dedup_block -> dedup_global
//! ```
//!
//! Everything up to `dedup_block` works on one block at a time and can run on
//! any number of workers. `dedup_global` is the single reduction per language.

mod dedup;
mod lid;
mod split;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dedup::{dedup_block, dedup_global};
pub use lid::{lid_filter, read_lid_predictions, ExternalPredictions, LangIdPrediction, LangIdentifier, Script, ScriptLid};
pub use split::{SplitRegistry, SplitRules};
pub use store::{
    block_file_name, block_path, build_blocks, manifest_path, read_block, read_records, write_block, BlockEntry,
    BlockManifest, BlockWriter,
};

/// Default sentence length cap, in Unicode scalar values.
pub const DEFAULT_MAX_CHARS: usize = 500;
/// Default minimum LID confidence for a sentence to be kept.
pub const DEFAULT_MIN_CONF: f32 = 0.5;
/// Block capacity used for production-sized corpora.
pub const PAPER_BLOCK_CAPACITY: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid language code {0:?}: expected 2-3 lowercase ASCII letters")]
    InvalidLang(String),
    #[error("no sentence splitting rules for language {0:?} and no fallback configured")]
    NoSplitRules(String),
    #[error("LID returned {predictions} predictions for {sentences} sentences")]
    PredictionCount { predictions: usize, sentences: usize },
    #[error("malformed LID prediction at line {line}: {reason}")]
    BadPrediction { line: usize, reason: String },
    #[error("block {index} of {lang} is missing: {path}")]
    MissingBlock { lang: String, index: u32, path: String },
    #[error("block {index} of {lang} does not match its manifest: {reason}")]
    BlockMismatch { lang: String, index: u32, reason: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("sentence contains a newline")]
    Newline,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// ISO-639 language code, lowercase ASCII.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Lang(String);

impl Lang {
    pub fn new(code: &str) -> Result<Self> {
        let ok = (2..=3).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase());
        if ok {
            Ok(Lang(code.to_string()))
        } else {
            Err(CorpusError::InvalidLang(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Lang {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        Lang::new(s)
    }
}

impl TryFrom<String> for Lang {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self> {
        Lang::new(&s)
    }
}

impl From<Lang> for String {
    fn from(l: Lang) -> String {
        l.0
    }
}

/// One deduplicated, language-tagged sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    /// `block * block_capacity + row`.
    pub global_id: u64,
    pub text: String,
    pub lang: Lang,
    pub block: u32,
}

impl SentenceRecord {
    /// Checks the record-level invariants of a finished corpus.
    pub fn validate(&self, max_chars: usize) -> Result<()> {
        if self.text.contains('\n') || self.text.contains('\r') {
            return Err(CorpusError::Newline);
        }
        let n = self.text.chars().count();
        if n > max_chars {
            return Err(CorpusError::Manifest(format!(
                "sentence {} has {n} characters, more than {max_chars}",
                self.global_id
            )));
        }
        Ok(())
    }
}

/// Split a paragraph into sentences using the rules registered for `lang`.
pub fn split_sentences(paragraph: &str, lang: &Lang, rules: &SplitRegistry) -> Result<Vec<String>> {
    let rule = rules.resolve(lang)?;
    Ok(rule.split(paragraph))
}

/// Drop sentences longer than `max_chars` Unicode scalar values, keeping order.
pub fn filter_length(sentences: Vec<String>, max_chars: usize) -> Vec<String> {
    sentences.into_iter().filter(|s| s.chars().count() <= max_chars).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lang_validation() {
        assert!(Lang::new("en").is_ok());
        assert!(Lang::new("yue").is_ok());
        assert!(Lang::new("EN").is_err());
        assert!(Lang::new("e").is_err());
        assert!(Lang::new("engl").is_err());
    }

    #[test]
    fn filter_length_boundaries() {
        let long: String = "x".repeat(501);
        let exact: String = "é".repeat(500);
        assert_eq!(filter_length(vec!["ok".into(), long], 500), vec!["ok".to_string()]);
        assert_eq!(filter_length(vec![exact.clone()], 500), vec![exact]);
        assert!(filter_length(vec![], 500).is_empty());
    }

    #[test]
    fn filter_length_matches_independent_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let input: Vec<String> = (0..10_000)
            .map(|_| {
                let len = rng.random_range(0..1000);
                (0..len).map(|_| if rng.random_bool(0.2) { 'ж' } else { 'a' }).collect()
            })
            .collect();
        let mut expected = Vec::new();
        for s in &input {
            let mut n = 0;
            for _ in s.chars() {
                n += 1;
            }
            if n <= 500 {
                expected.push(s.clone());
            }
        }
        let got = filter_length(input.clone(), 500);
        assert_eq!(got, expected);
        assert_eq!(filter_length(got.clone(), 500), got);
    }

    #[test]
    fn record_validation() {
        let rec = SentenceRecord { global_id: 0, text: "a\nb".into(), lang: Lang::new("en").unwrap(), block: 0 };
        assert!(rec.validate(500).is_err());
        let rec = SentenceRecord { text: "ab".into(), ..rec };
        assert!(rec.validate(500).is_ok());
        assert!(rec.validate(1).is_err());
    }
}
