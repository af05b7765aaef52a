//! End-to-end reading of documents into the exported hypothesis table.

use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::ingest::{self, Document};
use crate::linker::{Direction, LinkerModel};
use crate::tagger::{decode_spans, TaggerModel};

pub const CSV_HEADER: [&str; 7] = [
    "file_name",
    "hypothesis_num",
    "hypothesis",
    "variable_1",
    "variable_2",
    "direction",
    "causal_relationship",
];

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub file_name: String,
    pub hypothesis_num: String,
    pub hypothesis: String,
    pub variable_1: String,
    pub variable_2: String,
    pub direction: Direction,
    pub causal_relationship: u8,
}

impl HypothesisRecord {
    pub fn is_incomplete(&self) -> bool {
        self.variable_1.is_empty() || self.variable_2.is_empty()
    }
}

/// A candidate the detector turned down, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub doc_id: String,
    pub sentence_index: usize,
    pub hypothesis_num: String,
    pub text: String,
    pub hypothesis_prob: f64,
}

pub struct Models {
    pub detector: DetectorModel,
    pub tagger: TaggerModel,
    pub linker: LinkerModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// A candidate is kept when its hypothesis probability exceeds this.
    pub threshold: f64,
    pub max_words: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { threshold: DEFAULT_THRESHOLD, max_words: ingest::MAX_WORDS }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DocumentOutput {
    /// Records paired with the sentence index they came from.
    pub records: Vec<(usize, HypothesisRecord)>,
    pub rejected: Vec<RejectedCandidate>,
}

pub fn process_document(doc: &Document, models: &Models, opts: &RunOptions) -> Result<DocumentOutput> {
    let sentences = ingest::segment_sentences(doc);
    let candidates = ingest::censor_by_length(ingest::extract_candidates(&sentences), opts.max_words);
    let mut out = DocumentOutput::default();
    for cand in candidates {
        let prediction = models.detector.predict(&ingest::feature_tokens(&cand.sentence.text));
        if prediction.flagged || prediction.hypothesis_prob <= opts.threshold {
            out.rejected.push(RejectedCandidate {
                doc_id: doc.doc_id.clone(),
                sentence_index: cand.sentence.index,
                hypothesis_num: cand.hypothesis_num,
                text: cand.sentence.text,
                hypothesis_prob: prediction.hypothesis_prob,
            });
            continue;
        }
        let hypothesis = ingest::clean_hypothesis_text(&cand.sentence.text);
        let tokens: Vec<&str> = hypothesis.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let spans = decode_spans(&models.tagger.tag(&tokens)?);
        let link = models.linker.predict_link(&hypothesis);
        let record = HypothesisRecord {
            file_name: doc.doc_id.clone(),
            hypothesis_num: cand.hypothesis_num,
            hypothesis,
            variable_1: spans.variable_1,
            variable_2: spans.variable_2,
            direction: link.direction,
            causal_relationship: link.causal,
        };
        if record.is_incomplete() {
            warn!(
                "incomplete record {} {}: variable_1 {:?}, variable_2 {:?}",
                record.file_name, record.hypothesis_num, record.variable_1, record.variable_2
            );
        }
        out.records.push((cand.sentence.index, record));
    }
    Ok(out)
}

/// Sort key for labels like `h_4a`: prefix, number, then suffix, so that
/// `h_10` follows `h_9`.
pub fn hypothesis_sort_key(num: &str) -> (String, u64, String) {
    let (prefix, rest) = num.split_once('_').unwrap_or(("", num));
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    let suffix = rest[digits.len()..].to_string();
    (prefix.to_string(), digits.parse().unwrap_or(u64::MAX), suffix)
}

/// Combined output of a batch. `failed` lists documents that could not be
/// processed; they never abort the others.
#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    pub records: Vec<HypothesisRecord>,
    pub rejected: Vec<RejectedCandidate>,
    pub failed: Vec<(String, String)>,
}

pub fn run_documents(docs: &[Document], models: &Models, opts: &RunOptions) -> BatchOutput {
    let results: Vec<(String, Result<DocumentOutput>)> = docs
        .par_iter()
        .map(|d| (d.doc_id.clone(), process_document(d, models, opts)))
        .collect();
    let mut rows = Vec::new();
    let mut batch = BatchOutput::default();
    for (doc_id, result) in results {
        match result {
            Ok(out) => {
                rows.extend(out.records);
                batch.rejected.extend(out.rejected);
            }
            Err(e) => {
                warn!("document {doc_id} failed: {e}");
                batch.failed.push((doc_id, e.to_string()));
            }
        }
    }
    rows.sort_by(|(ia, a), (ib, b)| {
        (&a.file_name, hypothesis_sort_key(&a.hypothesis_num), ia)
            .cmp(&(&b.file_name, hypothesis_sort_key(&b.hypothesis_num), ib))
    });
    batch.rejected.sort_by(|a, b| (&a.doc_id, a.sentence_index).cmp(&(&b.doc_id, b.sentence_index)));
    batch.records = rows.into_iter().map(|(_, r)| r).collect();
    batch
}

/// Loads every file of `dir` and runs the batch. Documents that fail to load
/// are reported in `failed`.
pub fn run_dir(dir: &Path, extractor: Option<&str>, models: &Models, opts: &RunOptions) -> Result<BatchOutput> {
    let mut docs = Vec::new();
    let mut failed = Vec::new();
    for (path, doc) in ingest::load_dir(dir, extractor)? {
        match doc {
            Ok(d) => docs.push(d),
            Err(e) => failed.push((path.display().to_string(), e.to_string())),
        }
    }
    let mut batch = run_documents(&docs, models, opts);
    failed.extend(batch.failed);
    batch.failed = failed;
    Ok(batch)
}

pub fn write_records_csv<W: Write>(records: &[HypothesisRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.file_name.as_str(),
            r.hypothesis_num.as_str(),
            r.hypothesis.as_str(),
            r.variable_1.as_str(),
            r.variable_2.as_str(),
            r.direction.as_str(),
            if r.causal_relationship == 1 { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<HypothesisRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |i: usize| row.get(i).unwrap_or_default().to_string();
        out.push(HypothesisRecord {
            file_name: field(0),
            hypothesis_num: field(1),
            hypothesis: field(2),
            variable_1: field(3),
            variable_2: field(4),
            direction: field(5)
                .parse()
                .map_err(|e: Error| Error::Parse { line, message: e.to_string() })?,
            causal_relationship: match field(6).as_str() {
                "0" => 0,
                "1" => 1,
                other => {
                    let message = format!("causal_relationship {other:?}");
                    return Err(Error::Parse { line, message });
                }
            },
        });
    }
    Ok(out)
}

/// Smallest window of `tokens` containing `needle` as a subsequence, as the
/// positions of the matched tokens. Ties go to the leftmost window.
pub fn match_span<S: AsRef<str>, T: AsRef<str>>(tokens: &[S], needle: &[T]) -> Option<Vec<usize>> {
    if needle.is_empty() {
        return None;
    }
    let mut best: Option<Vec<usize>> = None;
    for start in 0..tokens.len() {
        if tokens[start].as_ref() != needle[0].as_ref() {
            continue;
        }
        let mut picked = vec![start];
        let mut j = start + 1;
        for want in &needle[1..] {
            while j < tokens.len() && tokens[j].as_ref() != want.as_ref() {
                j += 1;
            }
            if j == tokens.len() {
                break;
            }
            picked.push(j);
            j += 1;
        }
        if picked.len() < needle.len() {
            break;
        }
        let width = picked[picked.len() - 1] - picked[0];
        if best.as_ref().is_none_or(|b| width < b[b.len() - 1] - b[0]) {
            best = Some(picked);
        }
    }
    best
}

/// Tags recovered from a table row: the tokens of `variable_1` become 1 and
/// those of `variable_2` become 2. `None` when either variable is not a
/// token subsequence of the hypothesis or the two overlap.
pub fn gold_tags(hypothesis: &str, variable_1: &str, variable_2: &str) -> Option<crate::tagger::TagSequence> {
    let tokens: Vec<String> = hypothesis.split_whitespace().map(str::to_string).collect();
    let mut tags = vec![0u8; tokens.len()];
    for (variable, tag) in [(variable_1, 1u8), (variable_2, 2u8)] {
        let needle: Vec<&str> = variable.split_whitespace().collect();
        for i in match_span(&tokens, &needle)? {
            if tags[i] != 0 {
                return None;
            }
            tags[i] = tag;
        }
    }
    Some(crate::tagger::TagSequence { tokens, tags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sort_key_is_natural() {
        let mut v = vec!["h_10", "h_2", "h_4b", "h_4a", "p_1", "h_1"];
        v.sort_by_key(|s| hypothesis_sort_key(s));
        assert_eq!(v, ["h_1", "h_2", "h_4a", "h_4b", "h_10", "p_1"]);
    }

    #[test]
    fn span_prefers_tightest_window() {
        let toks = "will be associated with lower quit rates and lower dismissal rates"
            .split_whitespace()
            .collect::<Vec<_>>();
        let needle = ["quit", "rates", "and", "lower", "dismissal", "rates"];
        assert_eq!(match_span(&toks, &needle), Some(vec![5, 6, 7, 8, 9, 10]));
        assert_eq!(match_span(&toks, &["lower"]), Some(vec![4]));
        assert_eq!(match_span(&toks, &["absent"]), None);
    }

    #[test]
    fn gold_tags_rejects_overlap() {
        assert!(gold_tags("a b c", "a b", "b c").is_none());
        let ts = gold_tags("a x b", "b", "a").unwrap();
        assert_eq!(ts.tags, vec![2, 0, 1]);
    }

    #[test]
    fn csv_quotes_commas_and_round_trips() {
        let rec = HypothesisRecord {
            file_name: "a.txt".into(),
            hypothesis_num: "h_4a".into(),
            hypothesis: "x, y and z will raise w".into(),
            variable_1: "x, y and z".into(),
            variable_2: "w".into(),
            direction: Direction::Pos,
            causal_relationship: 0,
        };
        let mut buf = Vec::new();
        write_records_csv(std::slice::from_ref(&rec), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("file_name,hypothesis_num,hypothesis,variable_1,variable_2,direction,causal_relationship\n"));
        assert!(text.contains("\"x, y and z will raise w\""));
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), vec![rec]);
    }

    #[test]
    fn empty_batch_is_header_only() {
        let mut buf = Vec::new();
        write_records_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "file_name,hypothesis_num,hypothesis,variable_1,variable_2,direction,causal_relationship\n"
        );
    }

    proptest! {
        #[test]
        fn matched_span_spells_the_needle(
            toks in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..12),
            picks in prop::collection::vec(any::<bool>(), 12),
        ) {
            let needle: Vec<&str> = toks.iter().zip(&picks).filter(|(_, &p)| p).map(|(t, _)| *t).collect();
            let got = match_span(&toks, &needle);
            if needle.is_empty() {
                prop_assert!(got.is_none());
            } else {
                let idx = got.expect("needle is a subsequence by construction");
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                let spelled: Vec<&str> = idx.iter().map(|&i| toks[i]).collect();
                prop_assert_eq!(spelled, needle);
            }
        }
    }
}
