//! Sentence-level language identification.

use std::collections::HashMap;
use std::path::Path;

use super::{CorpusError, Lang, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LangIdPrediction {
    pub label: String,
    /// In `[0, 1]`.
    pub confidence: f32,
}

/// Anything that can label a batch of sentences with a language.
pub trait LangIdentifier: Send + Sync {
    fn predict_batch(&self, sentences: &[String]) -> Result<Vec<LangIdPrediction>>;
}

/// Keep sentences predicted as `expected` with confidence at least `min_conf`.
pub fn lid_filter(
    sentences: Vec<String>,
    expected: &Lang,
    predictor: &dyn LangIdentifier,
    min_conf: f32,
) -> Result<Vec<String>> {
    let predictions = predictor.predict_batch(&sentences)?;
    if predictions.len() != sentences.len() {
        return Err(CorpusError::PredictionCount { predictions: predictions.len(), sentences: sentences.len() });
    }
    Ok(sentences
        .into_iter()
        .zip(predictions)
        .filter(|(_, p)| p.label == expected.as_str() && p.confidence >= min_conf)
        .map(|(s, _)| s)
        .collect())
}

/// Writing systems recognised by [`ScriptLid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Script {
    Latin,
    Greek,
    Cyrillic,
    Armenian,
    Hebrew,
    Arabic,
    Devanagari,
    Bengali,
    Tamil,
    Thai,
    Georgian,
    Hangul,
    /// Kana, possibly mixed with Han.
    Japanese,
    Han,
}

impl Script {
    pub fn of(c: char) -> Option<Script> {
        if !c.is_alphabetic() {
            return None;
        }
        let cp = c as u32;
        let s = match cp {
            0x0041..=0x024F | 0x1E00..=0x1EFF => Script::Latin,
            0x0370..=0x03FF | 0x1F00..=0x1FFF => Script::Greek,
            0x0400..=0x052F => Script::Cyrillic,
            0x0530..=0x058F => Script::Armenian,
            0x0590..=0x05FF => Script::Hebrew,
            0x0600..=0x06FF | 0x0750..=0x077F | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF => Script::Arabic,
            0x0900..=0x097F => Script::Devanagari,
            0x0980..=0x09FF => Script::Bengali,
            0x0B80..=0x0BFF => Script::Tamil,
            0x0E00..=0x0E7F => Script::Thai,
            0x10A0..=0x10FF => Script::Georgian,
            0x1100..=0x11FF | 0x3130..=0x318F | 0xAC00..=0xD7AF => Script::Hangul,
            0x3040..=0x30FF => Script::Japanese,
            0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF => Script::Han,
            _ => return None,
        };
        Some(s)
    }

    /// Language reported when the script does not fit the configured hint.
    pub fn default_lang(self) -> &'static str {
        match self {
            Script::Latin => "en",
            Script::Greek => "el",
            Script::Cyrillic => "ru",
            Script::Armenian => "hy",
            Script::Hebrew => "he",
            Script::Arabic => "ar",
            Script::Devanagari => "hi",
            Script::Bengali => "bn",
            Script::Tamil => "ta",
            Script::Thai => "th",
            Script::Georgian => "ka",
            Script::Hangul => "ko",
            Script::Japanese => "ja",
            Script::Han => "zh",
        }
    }

    /// Scripts a language is normally written in. Unlisted codes are Latin.
    pub fn for_lang(lang: &str) -> &'static [Script] {
        match lang {
            "el" => &[Script::Greek],
            "ru" | "uk" | "bg" | "be" | "mk" | "sr" | "kk" | "ky" | "mn" | "tg" | "tt" | "ba" => &[Script::Cyrillic],
            "hy" => &[Script::Armenian],
            "he" | "yi" => &[Script::Hebrew],
            "ar" | "fa" | "ur" | "ps" | "ug" | "ckb" | "sd" => &[Script::Arabic],
            "hi" | "mr" | "ne" | "sa" => &[Script::Devanagari],
            "bn" | "as" => &[Script::Bengali],
            "ta" => &[Script::Tamil],
            "th" => &[Script::Thai],
            "ka" => &[Script::Georgian],
            "ko" => &[Script::Hangul, Script::Han],
            "ja" => &[Script::Japanese, Script::Han],
            "zh" | "yue" | "wuu" => &[Script::Han],
            _ => &[Script::Latin],
        }
    }
}

/// Deterministic Unicode-script heuristic.
///
/// The dominant script over alphabetic characters decides the label; the
/// confidence is that script's share of letters. When the dominant script is
/// one the `hint` language is written in, the hint is reported, otherwise the
/// script's default language. Text without letters gets `und` at confidence 0.
#[derive(Debug, Clone)]
pub struct ScriptLid {
    hint: Option<Lang>,
}

impl ScriptLid {
    pub fn new(hint: Option<Lang>) -> Self {
        ScriptLid { hint }
    }

    pub fn predict(&self, text: &str) -> LangIdPrediction {
        let mut counts: HashMap<Script, usize> = HashMap::new();
        let mut total = 0usize;
        for s in text.chars().filter_map(Script::of) {
            *counts.entry(s).or_default() += 1;
            total += 1;
        }
        if total == 0 {
            return LangIdPrediction { label: "und".into(), confidence: 0.0 };
        }
        if let Some(kana) = counts.get(&Script::Japanese).copied() {
            let han = counts.remove(&Script::Han).unwrap_or(0);
            counts.insert(Script::Japanese, kana + han);
        }
        // max count, ties to the lowest script
        let (script, n) = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        let label = match &self.hint {
            Some(h) if Script::for_lang(h.as_str()).contains(&script) => h.to_string(),
            _ => script.default_lang().to_string(),
        };
        LangIdPrediction { label, confidence: n as f32 / total as f32 }
    }
}

impl LangIdentifier for ScriptLid {
    fn predict_batch(&self, sentences: &[String]) -> Result<Vec<LangIdPrediction>> {
        Ok(sentences.iter().map(|s| self.predict(s)).collect())
    }
}

/// Predictions computed by an external classifier, one per sentence in order.
#[derive(Debug, Clone)]
pub struct ExternalPredictions {
    pub rows: Vec<LangIdPrediction>,
}

impl LangIdentifier for ExternalPredictions {
    fn predict_batch(&self, _sentences: &[String]) -> Result<Vec<LangIdPrediction>> {
        Ok(self.rows.clone())
    }
}

/// Parse a `label<TAB>confidence` TSV.
pub fn read_lid_predictions(path: &Path) -> Result<ExternalPredictions> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: &str| CorpusError::BadPrediction { line: i + 1, reason: reason.to_string() };
        let (label, conf) = line.split_once('\t').ok_or_else(|| bad("expected label<TAB>confidence"))?;
        let confidence: f32 = conf.trim().parse().map_err(|_| bad("confidence is not a number"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad("confidence outside [0, 1]"));
        }
        rows.push(LangIdPrediction { label: label.to_string(), confidence });
    }
    Ok(ExternalPredictions { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(c: &str) -> Lang {
        Lang::new(c).unwrap()
    }

    #[test]
    fn cyrillic_kept_for_ru() {
        let kept = lid_filter(vec!["Привет".into()], &lang("ru"), &ScriptLid::new(None), 0.5).unwrap();
        assert_eq!(kept, vec!["Привет".to_string()]);
    }

    #[test]
    fn latin_dropped_for_zh() {
        let kept = lid_filter(vec!["hello".into()], &lang("zh"), &ScriptLid::new(Some(lang("zh"))), 0.5).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn hint_resolves_shared_scripts() {
        let lid = ScriptLid::new(Some(lang("de")));
        assert_eq!(lid.predict("Guten Tag").label, "de");
        assert_eq!(lid.predict("Добрый день").label, "ru");
        let ja = ScriptLid::new(Some(lang("ja")));
        assert_eq!(ja.predict("今日はいい天気").label, "ja");
        assert_eq!(ja.predict("中文").label, "ja");
        assert_eq!(ScriptLid::new(Some(lang("zh"))).predict("ひらがな").label, "ja");
        let p = ScriptLid::new(None).predict("123 !!");
        assert_eq!((p.label.as_str(), p.confidence), ("und", 0.0));
    }

    #[test]
    fn confidence_is_script_share() {
        let p = ScriptLid::new(Some(lang("ru"))).predict("абвг ab");
        assert_eq!(p.label, "ru");
        assert!((p.confidence - 4.0 / 6.0).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&p.confidence));
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let ext = ExternalPredictions { rows: vec![LangIdPrediction { label: "en".into(), confidence: 1.0 }] };
        let err = lid_filter(vec!["a".into(), "b".into()], &lang("en"), &ext, 0.5).unwrap_err();
        assert!(matches!(err, CorpusError::PredictionCount { predictions: 1, sentences: 2 }));
    }

    #[test]
    fn external_file_join() {
        use rand::{Rng, SeedableRng};
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let labels = ["en", "de", "fr"];
        let sentences: Vec<String> = (0..1000).map(|i| format!("line {i}")).collect();
        let mut tsv = String::new();
        for _ in 0..1000 {
            let l = labels[rng.random_range(0..3)];
            let c: f32 = (rng.random_range(0..=100) as f32) / 100.0;
            tsv.push_str(&format!("{l}\t{c}\n"));
        }
        let path = dir.path().join("pred.tsv");
        std::fs::write(&path, &tsv).unwrap();

        // independent join of the two files
        let expected: Vec<String> = sentences
            .iter()
            .zip(tsv.lines())
            .filter(|(_, row)| {
                let mut f = row.split('\t');
                f.next() == Some("en") && f.next().unwrap().parse::<f32>().unwrap() >= 0.5
            })
            .map(|(s, _)| s.clone())
            .collect();

        let ext = read_lid_predictions(&path).unwrap();
        let kept = lid_filter(sentences, &lang("en"), &ext, 0.5).unwrap();
        assert_eq!(kept, expected);
    }

    #[test]
    fn malformed_prediction_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        std::fs::write(&path, "en\t0.9\nen 0.3\n").unwrap();
        assert!(matches!(read_lid_predictions(&path), Err(CorpusError::BadPrediction { line: 2, .. })));
        std::fs::write(&path, "en\t1.5\n").unwrap();
        assert!(read_lid_predictions(&path).is_err());
    }
}
