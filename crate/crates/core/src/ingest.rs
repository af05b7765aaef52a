//! Document loading, sentence segmentation and hypothesis-candidate extraction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::stopwords;

/// Default censoring threshold for candidate sentences.
pub const MAX_WORDS: usize = 60;

/// Trigger sentences shorter than this absorb the following sentence.
const MERGE_BELOW_TOKENS: usize = 4;
/// Upper bound on segmented sentences merged into one candidate.
const MERGE_MAX_SENTENCES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence {
            doc_id: doc_id.into(),
            index,
            text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Hypothesis,
    Proposition,
    HShort,
    PShort,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSentence {
    pub sentence: Sentence,
    pub trigger_kind: TriggerKind,
    pub hypothesis_num: String,
    pub word_count: usize,
}

/// Serialized form of a candidate, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub hypothesis_num: String,
    pub text: String,
}

impl From<&CandidateSentence> for CandidateRecord {
    fn from(c: &CandidateSentence) -> Self {
        CandidateRecord {
            doc_id: c.sentence.doc_id.clone(),
            sentence_index: c.sentence.index,
            hypothesis_num: c.hypothesis_num.clone(),
            text: c.sentence.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub mean_words: f64,
    pub sd_words: f64,
    pub histogram: BTreeMap<usize, usize>,
}

/// Trigger expression: a hypothesis/proposition label followed by a number
/// and an optional sub-hypothesis letter.
pub static TRIGGER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(hypothesis|proposition|h|p)\s*[#\-]?\s*(\d+)([a-z])?\b").unwrap()
});

/// Label at the very start of a sentence, with its trailing separator.
static LEADING_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)^[\s"'“‘(\[]*(hypothesis|proposition|h|p)\s*[#\-]?\s*\d+[a-z]?\b[)\]]?\s*[:.\-–—)]?\s*"#)
        .unwrap()
});

static SHORT_LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^[hp]\d+[a-z]?$").unwrap());

const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "cf", "co", "corp", "dr", "e.g", "ed", "eds", "eq", "fig", "figs", "i.e", "inc",
    "jr", "ltd", "mr", "mrs", "ms", "no", "nos", "pp", "prof", "resp", "sr", "st", "tab", "viz",
    "vol", "vs",
];

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '“' | '”' | '‘' | '’' | '–' | '—' | '…' | '«' | '»' | '′' | '″' | '•' | '·'
        )
}

/// Strips leading and trailing punctuation from a single token.
pub fn strip_punct(token: &str) -> &str {
    token.trim_matches(is_punct)
}

/// Whitespace split, edge punctuation stripped, empty tokens dropped.
/// Hyphenated words stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(strip_punct)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Number of whitespace-delimited words, before any stop-word removal.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Reads a document. `.txt` files pass through unchanged; other files go
/// through `extractor`, a command template where `{input}` is replaced by the
/// path and whose stdout is the document text.
pub fn load_document(path: &Path, extractor: Option<&str>) -> Result<Document> {
    let doc_id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let is_text = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    let raw_text = if is_text {
        fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    } else {
        let template = extractor.ok_or_else(|| Error::NoExtractor(doc_id.clone()))?;
        run_extractor(template, path)?
    };
    if raw_text.trim().is_empty() {
        return Err(Error::EmptyDocument(doc_id));
    }
    Ok(Document { doc_id, raw_text })
}

fn run_extractor(template: &str, path: &Path) -> Result<String> {
    let path_str = path.display().to_string();
    let mut parts = template.split_whitespace().map(|p| p.replace("{input}", &path_str));
    let program = parts.next().ok_or_else(|| Error::Extractor {
        path: path_str.clone(),
        message: "empty extractor template".into(),
    })?;
    let mut args: Vec<String> = parts.collect();
    if !template.contains("{input}") {
        args.push(path_str.clone());
    }
    let output = Command::new(&program)
        .args(&args)
        .output()
        .map_err(|e| Error::Extractor {
            path: path_str.clone(),
            message: format!("cannot run {program}: {e}"),
        })?;
    if !output.status.success() {
        return Err(Error::Extractor {
            path: path_str,
            message: format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ),
        });
    }
    String::from_utf8(output.stdout).map_err(|e| Error::Extractor {
        path: path_str,
        message: format!("output is not UTF-8: {e}"),
    })
}

/// Loads every regular file of `dir` in file-name order. Failures are
/// returned per file so a batch can skip them.
pub fn load_dir(dir: &Path, extractor: Option<&str>) -> Result<Vec<(PathBuf, Result<Document>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let doc = load_document(&p, extractor);
            if let Err(e) = &doc {
                warn!("skipping {}: {e}", p.display());
            }
            (p, doc)
        })
        .collect())
}

/// Splits on `.`, `!` or `?` followed by whitespace and an uppercase letter
/// or digit, unless the period closes an abbreviation, an initial, or a
/// hypothesis label such as `H1.` or `Hypothesis 2.`.
pub fn segment_sentences(doc: &Document) -> Vec<Sentence> {
    let text = doc.raw_text.as_str();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // closing quotes and brackets belong to the sentence
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end].1, '"' | '\'' | '”' | '’' | ')' | ']') {
                end += 1;
            }
            let mut next = end;
            while next < chars.len() && chars[next].1.is_whitespace() {
                next += 1;
            }
            let opens_sentence = next > end
                && next < chars.len()
                && starts_sentence(&chars[next..]);
            if opens_sentence && (c != '.' || !protects_period(&text[start..chars[i].0])) {
                let cut = chars.get(end).map_or(text.len(), |&(b, _)| b);
                push_sentence(&mut sentences, &doc.doc_id, &text[start..cut]);
                start = chars[next].0;
                i = next;
                continue;
            }
            i = end;
            continue;
        }
        i += 1;
    }
    push_sentence(&mut sentences, &doc.doc_id, &text[start..]);
    sentences
}

fn starts_sentence(rest: &[(usize, char)]) -> bool {
    let mut it = rest.iter().map(|&(_, c)| c).skip_while(|c| matches!(c, '"' | '\'' | '“' | '‘' | '(' | '['));
    it.next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
}

/// Whether the period ending `before` is not a sentence boundary.
fn protects_period(before: &str) -> bool {
    let mut words = before.split_whitespace().rev();
    let Some(last) = words.next() else {
        return false;
    };
    let last = last.trim_start_matches(|c: char| is_punct(c));
    let lower = last.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    if last.chars().count() == 1 && last.chars().all(|c| c.is_uppercase()) {
        return true;
    }
    if SHORT_LABEL.is_match(last) {
        return true;
    }
    if last.chars().all(|c| c.is_ascii_digit()) || is_number_with_letter(last) {
        if let Some(prev) = words.next() {
            let prev = strip_punct(prev).to_lowercase();
            return matches!(prev.as_str(), "hypothesis" | "proposition" | "h" | "p");
        }
    }
    false
}

fn is_number_with_letter(s: &str) -> bool {
    let digits = s.trim_end_matches(|c: char| c.is_ascii_alphabetic());
    !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && s.len() - digits.len() == 1
}

fn push_sentence(out: &mut Vec<Sentence>, doc_id: &str, raw: &str) {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return;
    }
    let text = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    let index = out.len();
    out.push(Sentence::new(doc_id, index, text));
}

/// Normalized label of the first trigger in `text`, e.g. `"H4a:"` → `"h_4a"`.
pub fn find_trigger(text: &str) -> Option<(TriggerKind, String)> {
    let caps = TRIGGER.captures(text)?;
    let label = caps[1].to_lowercase();
    let kind = match label.as_str() {
        "hypothesis" => TriggerKind::Hypothesis,
        "proposition" => TriggerKind::Proposition,
        "h" => TriggerKind::HShort,
        _ => TriggerKind::PShort,
    };
    let prefix = match kind {
        TriggerKind::Hypothesis | TriggerKind::HShort => 'h',
        TriggerKind::Proposition | TriggerKind::PShort => 'p',
    };
    let number = caps[2].trim_start_matches('0');
    let number = if number.is_empty() { "0" } else { number };
    let suffix = caps.get(3).map(|m| m.as_str().to_lowercase()).unwrap_or_default();
    Some((kind, format!("{prefix}_{number}{suffix}")))
}

/// Sentences containing a trigger expression. A trigger sentence with fewer
/// than four tokens absorbs the following sentence (up to three in total).
pub fn extract_candidates(sentences: &[Sentence]) -> Vec<CandidateSentence> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sentences.len() {
        let first = &sentences[i];
        let Some((trigger_kind, hypothesis_num)) = find_trigger(&first.text) else {
            i += 1;
            continue;
        };
        let mut text = first.text.clone();
        let mut used = 1;
        while used < MERGE_MAX_SENTENCES
            && tokenize(&text).len() < MERGE_BELOW_TOKENS
            && i + used < sentences.len()
            && sentences[i + used].doc_id == first.doc_id
        {
            text.push(' ');
            text.push_str(&sentences[i + used].text);
            used += 1;
        }
        let word_count = word_count(&text);
        out.push(CandidateSentence {
            sentence: Sentence::new(first.doc_id.clone(), first.index, text),
            trigger_kind,
            hypothesis_num,
            word_count,
        });
        i += used;
    }
    out
}

/// Drops candidates with more than `max_words` words, keeping order.
pub fn censor_by_length(candidates: Vec<CandidateSentence>, max_words: usize) -> Vec<CandidateSentence> {
    candidates
        .into_iter()
        .filter(|c| c.word_count <= max_words)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub lowercase: bool,
    pub strip_stopwords: bool,
    pub strip_punct: bool,
}

impl NormalizeOptions {
    pub const ALL: NormalizeOptions = NormalizeOptions {
        lowercase: true,
        strip_stopwords: true,
        strip_punct: true,
    };
}

/// Deterministic, idempotent token normalization.
pub fn normalize_tokens<S: AsRef<str>>(tokens: &[S], opts: NormalizeOptions) -> Vec<String> {
    tokens
        .iter()
        .filter_map(|t| {
            let mut t = t.as_ref();
            if opts.strip_punct {
                t = strip_punct(t);
            }
            if t.is_empty() {
                return None;
            }
            let t = if opts.lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            };
            if opts.strip_stopwords && stopwords::is_stopword(&t) {
                return None;
            }
            Some(t)
        })
        .collect()
}

/// Feature tokens used by the detector and linker: tokenized, lowercased,
/// stop words removed.
pub fn feature_tokens(text: &str) -> Vec<String> {
    normalize_tokens(&tokenize(text), NormalizeOptions::ALL)
}

/// Hypothesis text as exported: leading label removed, lowercased, trailing
/// terminal punctuation dropped.
pub fn clean_hypothesis_text(text: &str) -> String {
    let body = match LEADING_LABEL.find(text) {
        Some(m) if m.end() < text.len() => &text[m.end()..],
        _ => text,
    };
    let body = body
        .trim()
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?' | '"' | '”' | '’' | '\''))
        .trim_start_matches(|c: char| matches!(c, '"' | '“' | '‘' | '\''))
        .trim();
    body.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn corpus_stats(candidates: &[CandidateSentence]) -> Result<CorpusStats> {
    let counts: Vec<usize> = candidates.iter().map(|c| c.word_count).collect();
    stats_from_counts(&counts)
}

/// Population mean and standard deviation of word counts, plus a histogram.
pub fn stats_from_counts(counts: &[usize]) -> Result<CorpusStats> {
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut histogram = BTreeMap::new();
    for &c in counts {
        *histogram.entry(c).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        sentence_count: counts.len(),
        mean_words: mean,
        sd_words: var.max(0.0).sqrt(),
        histogram,
    })
}
