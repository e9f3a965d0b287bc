//! Rule-based sentence splitting.
//!
//! Alphabetic languages use a Moses-style splitter: a boundary is placed after
//! a token ending in terminal punctuation unless the token is a known
//! non-breaking prefix (abbreviation), a single-letter initial, or the next
//! token starts in lowercase. Chinese and Japanese use a terminal-punctuation
//! regex since they do not separate words with spaces.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{CorpusError, Lang, Result};

/// Sentence boundary rules for one language.
#[derive(Debug, Clone)]
pub enum SplitRules {
    /// Whitespace-tokenized splitting with a list of non-breaking prefixes.
    Prefixes {
        nonbreaking: Vec<String>,
        /// Prefixes that only block a split when the next token is a number (e.g. "No. 5").
        numeric_only: Vec<String>,
    },
    /// Cut after runs of CJK/full-width terminal punctuation.
    CjkRegex,
}

/// Per-language rule sets with a similar-language fallback table and an
/// optional default.
#[derive(Debug, Clone)]
pub struct SplitRegistry {
    rules: HashMap<Lang, SplitRules>,
    fallback: HashMap<Lang, Lang>,
    default: Option<Lang>,
}

const EN_PREFIXES: &[&str] = &[
    "Adj", "Adm", "Adv", "Asst", "Bart", "Bldg", "Brig", "Bros", "Capt", "Cmdr", "Col", "Comdr", "Con", "Corp",
    "Cpl", "DR", "Dr", "Drs", "Ens", "Gen", "Gov", "Hon", "Hr", "Hosp", "Insp", "Lt", "MM", "MR", "MRS", "MS",
    "Maj", "Messrs", "Mlle", "Mme", "Mr", "Mrs", "Ms", "Msgr", "Op", "Ord", "Pfc", "Ph", "Prof", "Pvt", "Rep",
    "Reps", "Res", "Rev", "Rt", "Sen", "Sens", "Sfc", "Sgt", "Sr", "St", "Supt", "Surg", "v", "vs", "i.e", "rev",
    "e.g", "Jan", "Feb", "Mar", "Apr", "Jun", "Jul", "Aug", "Sep", "Sept", "Oct", "Nov", "Dec", "etc", "approx",
    "Inc", "Ltd", "Co", "Jr",
];
const EN_NUMERIC: &[&str] = &["No", "Nos", "Art", "Nr", "pp"];

const DE_PREFIXES: &[&str] = &[
    "Dr", "Prof", "Hr", "Fr", "Hrn", "Nr", "bzw", "bzgl", "ca", "ggf", "inkl", "usw", "vgl", "z.B", "d.h", "u.a",
    "Jan", "Feb", "Mär", "Apr", "Jun", "Jul", "Aug", "Sept", "Okt", "Nov", "Dez", "St", "Str", "evtl", "etc",
];
const ES_PREFIXES: &[&str] = &[
    "Sr", "Sra", "Srta", "Dr", "Dra", "Lic", "Ing", "Arq", "Prof", "Ud", "Uds", "Vd", "Vds", "Av", "Avda", "Cía",
    "etc", "pág", "núm", "aprox", "ej", "Excmo", "Ilmo", "Sto", "Sta", "D", "Dña",
];
const FR_PREFIXES: &[&str] = &[
    "M", "MM", "Mme", "Mmes", "Mlle", "Mlles", "Dr", "Pr", "Me", "Mgr", "St", "Ste", "av", "bd", "etc", "cf",
    "p.ex", "env", "janv", "févr", "avr", "juil", "sept", "oct", "nov", "déc",
];
const RU_PREFIXES: &[&str] = &[
    "г", "гг", "др", "им", "т.е", "т.д", "т.п", "и.о", "проф", "ул", "д", "кв", "стр", "рис", "см", "тыс", "млн",
    "млрд", "руб", "коп", "пр", "англ",
];
const PT_PREFIXES: &[&str] = &["Sr", "Sra", "Dr", "Dra", "Prof", "Exmo", "Exma", "Av", "etc", "pág", "nº", "Sto", "Sta"];
const IT_PREFIXES: &[&str] = &["Sig", "Sigg", "Sig.ra", "Dott", "Dr", "Prof", "Ing", "Avv", "ecc", "pag", "S", "Spett"];
const NL_PREFIXES: &[&str] = &["dhr", "mevr", "Dr", "dr", "Prof", "prof", "mr", "ir", "ing", "bijv", "o.a", "enz", "etc", "nr", "blz"];

impl SplitRegistry {
    /// Registry with no rules, no fallbacks and no default language.
    pub fn empty() -> Self {
        SplitRegistry { rules: HashMap::new(), fallback: HashMap::new(), default: None }
    }

    /// Built-in rules: European prefix lists, CJK regex for zh/ja/yue,
    /// similar-language fallbacks and English as the final default.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        let lang = |c: &str| Lang::new(c).expect("static code");
        let prefixes = |list: &[&str], numeric: &[&str]| SplitRules::Prefixes {
            nonbreaking: list.iter().map(|s| s.to_string()).collect(),
            numeric_only: numeric.iter().map(|s| s.to_string()).collect(),
        };
        reg.insert(lang("en"), prefixes(EN_PREFIXES, EN_NUMERIC));
        reg.insert(lang("de"), prefixes(DE_PREFIXES, &["Nr", "S", "Abs"]));
        reg.insert(lang("es"), prefixes(ES_PREFIXES, &["No", "Nº", "art"]));
        reg.insert(lang("fr"), prefixes(FR_PREFIXES, &["No", "n", "art", "p"]));
        reg.insert(lang("ru"), prefixes(RU_PREFIXES, &["№", "ст", "п"]));
        reg.insert(lang("pt"), prefixes(PT_PREFIXES, &["No", "art"]));
        reg.insert(lang("it"), prefixes(IT_PREFIXES, &["No", "n", "art"]));
        reg.insert(lang("nl"), prefixes(NL_PREFIXES, &["No", "art"]));
        for cjk in ["zh", "ja", "yue"] {
            reg.insert(lang(cjk), SplitRules::CjkRegex);
        }
        for (from, to) in [
            ("gl", "es"),
            ("ca", "es"),
            ("ast", "es"),
            ("oc", "fr"),
            ("uk", "ru"),
            ("be", "ru"),
            ("bg", "ru"),
            ("af", "nl"),
            ("lb", "de"),
            ("wuu", "zh"),
        ] {
            reg.set_fallback(lang(from), lang(to));
        }
        reg.default = Some(lang("en"));
        reg
    }

    pub fn insert(&mut self, lang: Lang, rules: SplitRules) {
        self.rules.insert(lang, rules);
    }

    pub fn set_fallback(&mut self, lang: Lang, similar: Lang) {
        self.fallback.insert(lang, similar);
    }

    pub fn set_default(&mut self, lang: Option<Lang>) {
        self.default = lang;
    }

    /// Resolve rules along `lang -> similar language -> default`.
    pub fn resolve(&self, lang: &Lang) -> Result<&SplitRules> {
        if let Some(r) = self.rules.get(lang) {
            return Ok(r);
        }
        if let Some(r) = self.fallback.get(lang).and_then(|sim| self.rules.get(sim)) {
            return Ok(r);
        }
        if let Some(r) = self.default.as_ref().and_then(|d| self.rules.get(d)) {
            return Ok(r);
        }
        Err(CorpusError::NoSplitRules(lang.to_string()))
    }
}

impl Default for SplitRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn cjk_terminal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"[。！？!?．]+[」』）)"”’]*"#).expect("valid regex"))
}

const CLOSERS: &[char] = &['"', '\'', '”', '’', '»', ')', ']', '}', '」', '』'];
const TERMINALS: &[char] = &['.', '!', '?', '…', '؟', '।', '։'];

impl SplitRules {
    /// Split `paragraph`; newlines are hard boundaries and no output is empty.
    pub fn split(&self, paragraph: &str) -> Vec<String> {
        let mut out = Vec::new();
        for line in paragraph.split(['\n', '\r']) {
            match self {
                SplitRules::CjkRegex => split_cjk(line, &mut out),
                SplitRules::Prefixes { nonbreaking, numeric_only } => {
                    split_prefixed(line, nonbreaking, numeric_only, &mut out)
                }
            }
        }
        out
    }
}

fn push_trimmed(s: &str, out: &mut Vec<String>) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

fn split_cjk(line: &str, out: &mut Vec<String>) {
    let mut start = 0;
    for m in cjk_terminal().find_iter(line) {
        push_trimmed(&line[start..m.end()], out);
        start = m.end();
    }
    push_trimmed(&line[start..], out);
}

fn split_prefixed(line: &str, nonbreaking: &[String], numeric_only: &[String], out: &mut Vec<String>) {
    // token byte spans
    let mut tokens: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((s, line.len()));
    }
    let mut sent_start: Option<usize> = None;
    for (i, &(s, e)) in tokens.iter().enumerate() {
        sent_start.get_or_insert(s);
        let next = tokens.get(i + 1).map(|&(ns, ne)| &line[ns..ne]);
        if let Some(next) = next {
            if is_boundary(&line[s..e], next, nonbreaking, numeric_only) {
                push_trimmed(&line[sent_start.take().unwrap()..e], out);
            }
        }
    }
    if let Some(s) = sent_start {
        push_trimmed(&line[s..], out);
    }
}

fn is_boundary(token: &str, next: &str, nonbreaking: &[String], numeric_only: &[String]) -> bool {
    let core = token.trim_end_matches(CLOSERS);
    let Some(last) = core.chars().last() else {
        return false;
    };
    if !TERMINALS.contains(&last) {
        return false;
    }
    let next_first = next.chars().find(|c| !matches!(c, '"' | '\'' | '“' | '‘' | '«' | '(' | '[' | '¿' | '¡'));
    let next_lower = next_first.is_some_and(|c| c.is_lowercase());
    if next_lower {
        return false;
    }
    if last != '.' {
        return true;
    }
    let word = core.trim_end_matches('.');
    if word.is_empty() {
        // "..." standing alone
        return true;
    }
    // the prefix is the trailing word, e.g. "(Dr." -> "Dr"
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    if nonbreaking.iter().any(|p| p == word) {
        return false;
    }
    let next_is_digit = next_first.is_some_and(|c| c.is_ascii_digit());
    if next_is_digit && numeric_only.iter().any(|p| p == word) {
        return false;
    }
    let mut chars = word.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_uppercase() {
            return false;
        }
    }
    // acronyms with interior periods: "U.S."
    if word.contains('.') && word.split('.').all(|seg| seg.chars().count() <= 2) {
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(text: &str, lang: &str) -> Vec<String> {
        super::super::split_sentences(text, &Lang::new(lang).unwrap(), &SplitRegistry::builtin()).unwrap()
    }

    #[test]
    fn two_periods() {
        assert_eq!(split("Hello. World.", "en"), vec!["Hello.", "World."]);
    }

    #[test]
    fn empty_input() {
        assert!(split("", "en").is_empty());
        assert!(split("", "ja").is_empty());
        assert!(split("   \n  ", "de").is_empty());
    }

    #[test]
    fn japanese_regex_split() {
        // terminals at byte positions after 。, ！ and the final 。
        let text = "今日は晴れです。明日は雨が降るでしょう！「本当ですか？」と彼は聞いた。";
        assert_eq!(
            split(text, "ja"),
            vec!["今日は晴れです。", "明日は雨が降るでしょう！", "「本当ですか？」", "と彼は聞いた。"]
        );
        assert_eq!(split("没有标点的句子", "zh"), vec!["没有标点的句子"]);
    }

    #[test]
    fn abbreviations_and_initials() {
        assert_eq!(
            split("Mr. Smith met Dr. Jones. They talked.", "en"),
            vec!["Mr. Smith met Dr. Jones.", "They talked."]
        );
        assert_eq!(split("J. R. R. Tolkien wrote books.", "en"), vec!["J. R. R. Tolkien wrote books."]);
        assert_eq!(split("See No. 5 for details. Done!", "en"), vec!["See No. 5 for details.", "Done!"]);
        assert_eq!(split("He lives in the U.S. now.", "en"), vec!["He lives in the U.S. now."]);
        assert_eq!(split("Really? Yes! \"Quoted.\" Next", "en"), vec!["Really?", "Yes!", "\"Quoted.\"", "Next"]);
        assert_eq!(split("it ends. lowercase continues", "en"), vec!["it ends. lowercase continues"]);
    }

    #[test]
    fn newlines_are_boundaries() {
        let out = split("first line\nsecond line. Third", "en");
        assert_eq!(out, vec!["first line", "second line.", "Third"]);
        assert!(out.iter().all(|s| !s.contains('\n') && !s.is_empty()));
    }

    #[test]
    fn interior_whitespace_preserved() {
        assert_eq!(split("A  b c.  D", "en"), vec!["A  b c.", "D"]);
    }

    #[test]
    fn fallback_chain() {
        let reg = SplitRegistry::builtin();
        let gl = Lang::new("gl").unwrap();
        let es = Lang::new("es").unwrap();
        assert!(std::ptr::eq(reg.resolve(&gl).unwrap(), reg.resolve(&es).unwrap()));
        // Spanish prefix list applies to Galician
        assert_eq!(split("La Sra. Pérez llegó. Bien.", "gl"), vec!["La Sra. Pérez llegó.", "Bien."]);
        // unknown language defaults to English
        let xx = Lang::new("xx").unwrap();
        let en = Lang::new("en").unwrap();
        assert!(std::ptr::eq(reg.resolve(&xx).unwrap(), reg.resolve(&en).unwrap()));
    }

    #[test]
    fn unknown_language_without_default_errors() {
        let mut reg = SplitRegistry::builtin();
        reg.set_default(None);
        let err = reg.resolve(&Lang::new("xx").unwrap()).unwrap_err();
        assert!(err.to_string().contains("\"xx\""), "{err}");
    }

    proptest::proptest! {
        #[test]
        fn never_emits_empty_or_newline(s in "[a-zA-Z .!?\n。！？ ]{0,80}", cjk in proptest::bool::ANY) {
            let out = split(&s, if cjk { "ja" } else { "en" });
            for seg in &out {
                proptest::prop_assert!(!seg.is_empty());
                proptest::prop_assert!(!seg.contains('\n'));
            }
            let joined: String = out.concat().chars().filter(|c| !c.is_whitespace()).collect();
            let orig: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            proptest::prop_assert_eq!(joined, orig);
        }
    }
}
