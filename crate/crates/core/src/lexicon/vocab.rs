//! Word n-gram vocabularies and bag-of-n-gram vectors.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::stem::porter_stem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    Stem,
}

impl Normalization {
    pub fn apply<S: AsRef<str>>(self, tokens: &[S]) -> Vec<String> {
        match self {
            Normalization::None => tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            Normalization::Stem => tokens.iter().map(|t| porter_stem(t.as_ref())).collect(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Normalization::None => "None",
            Normalization::Stem => "Stemming",
        }
    }
}

/// All word n-grams with 1 ≤ n ≤ `max_n`, space-joined.
pub fn ngrams<S: AsRef<str>>(tokens: &[S], max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        for window in tokens.windows(n) {
            let parts: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            out.push(parts.join(" "));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub ngram: String,
    pub id: usize,
    pub corpus_freq: usize,
    #[serde(default)]
    pub doc_freq: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    max_n: usize,
    normalization: Normalization,
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    max_n: usize,
    normalization: Normalization,
    entries: Vec<VocabEntry>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = String;

    fn try_from(f: VocabularyFile) -> std::result::Result<Self, String> {
        let mut entries = f.entries;
        entries.sort_by_key(|e| e.id);
        if entries.iter().enumerate().any(|(i, e)| e.id != i) {
            return Err("vocabulary ids are not dense".into());
        }
        let index = entries.iter().map(|e| (e.ngram.clone(), e.id)).collect();
        Ok(Vocabulary {
            max_n: f.max_n,
            normalization: f.normalization,
            entries,
            index,
        })
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            max_n: v.max_n,
            normalization: v.normalization,
            entries: v.entries,
        }
    }
}

impl Vocabulary {
    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn id(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn ngram(&self, id: usize) -> &str {
        &self.entries[id].ngram
    }
}

/// Vocabulary of every n-gram (n ≤ `max_n`) seen at least `min_count` times.
/// Ids follow lexicographic order of the n-gram strings.
pub fn build_vocabulary<S: AsRef<str>>(
    corpus: &[Vec<S>],
    max_n: usize,
    min_count: usize,
    normalization: Normalization,
) -> Result<Vocabulary> {
    if !(1..=3).contains(&max_n) {
        return Err(Error::InvalidConfig(format!("max_n must be 1, 2 or 3, got {max_n}")));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for sentence in corpus {
        let grams = ngrams(&normalization.apply(sentence), max_n);
        let mut seen = std::collections::HashSet::new();
        for g in grams {
            let first = seen.insert(g.clone());
            let e = counts.entry(g).or_default();
            e.0 += 1;
            if first {
                e.1 += 1;
            }
        }
    }
    let entries: Vec<VocabEntry> = counts
        .into_iter()
        .filter(|(_, (freq, _))| *freq >= min_count)
        .enumerate()
        .map(|(id, (ngram, (corpus_freq, doc_freq)))| VocabEntry {
            ngram,
            id,
            corpus_freq,
            doc_freq,
        })
        .collect();
    let index = entries.iter().map(|e| (e.ngram.clone(), e.id)).collect();
    Ok(Vocabulary {
        max_n,
        normalization,
        entries,
        index,
    })
}

/// Sparse n-gram counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BowVector {
    pub counts: BTreeMap<usize, u32>,
}

impl BowVector {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Counts scaled to unit L2 norm; empty when there are no counts.
    pub fn l2_normalized(&self) -> Vec<(usize, f64)> {
        let norm = self
            .counts
            .values()
            .map(|&c| f64::from(c).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Vec::new();
        }
        self.counts
            .iter()
            .map(|(&id, &c)| (id, f64::from(c) / norm))
            .collect()
    }
}

/// Counts of in-vocabulary n-grams of `tokens`, after the vocabulary's normalization.
pub fn bow_vector<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> BowVector {
    let mut bow = BowVector::default();
    for g in ngrams(&vocab.normalization.apply(tokens), vocab.max_n) {
        if let Some(id) = vocab.id(&g) {
            *bow.counts.entry(id).or_insert(0) += 1;
        }
    }
    bow
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bigram_vocab_is_exhaustive() {
        let v = build_vocabulary(&[toks("a b")], 2, 1, Normalization::None).unwrap();
        let grams: Vec<&str> = v.entries().iter().map(|e| e.ngram.as_str()).collect();
        assert_eq!(grams, vec!["a", "a b", "b"]);
    }

    #[test]
    fn min_count_filters_everything() {
        let v = build_vocabulary(&[toks("a b")], 2, 3, Normalization::None).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn unigram_counts() {
        let corpus = vec![toks("firm performance and firm value")];
        let v = build_vocabulary(&corpus, 1, 1, Normalization::None).unwrap();
        let b = bow_vector(&v, &corpus[0]);
        assert_eq!(b.counts[&v.id("firm").unwrap()], 2);
        assert!(bow_vector(&v, &Vec::<String>::new()).is_empty());
    }

    #[test]
    fn stemming_applies_before_ngrams() {
        let v = build_vocabulary(&[toks("positively associated")], 2, 1, Normalization::Stem).unwrap();
        assert!(v.id("posit associ").is_some());
        assert_eq!(bow_vector(&v, &toks("positively associated")).counts.len(), 3);
    }

    #[test]
    fn json_shape() {
        let v = build_vocabulary(&[toks("a b")], 1, 1, Normalization::Stem).unwrap();
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["max_n"], 3 - 2);
        assert_eq!(json["normalization"], "stem");
        assert_eq!(json["entries"][1]["ngram"], "b");
        assert_eq!(json["entries"][1]["id"], 1);
        assert_eq!(json["entries"][1]["corpus_freq"], 1);
        let back: Vocabulary = serde_json::from_value(json).unwrap();
        assert_eq!(back, v);
    }

    /// Independent enumerator: every contiguous slice of length 1..=n.
    fn brute_counts(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for start in 0..tokens.len() {
            for len in 1..=n {
                if start + len <= tokens.len() {
                    *out.entry(tokens[start..start + len].join(" ")).or_insert(0) += 1;
                }
            }
        }
        out
    }

    fn fixture_corpus() -> Vec<Vec<String>> {
        let words = ["firm", "value", "grows", "with", "size", "and", "age", "stakeholder"];
        let mut r = crate::rng::seeded(3);
        use rand::Rng as _;
        (0..20)
            .map(|_| {
                let len = r.random_range(1..9);
                (0..len).map(|_| words[r.random_range(0..words.len())].to_string()).collect()
            })
            .collect()
    }

    #[test]
    fn vocabulary_matches_brute_force_enumeration() {
        let corpus = fixture_corpus();
        let v = build_vocabulary(&corpus, 3, 1, Normalization::None).unwrap();
        let mut total = BTreeMap::new();
        for s in &corpus {
            for (g, c) in brute_counts(s, 3) {
                *total.entry(g).or_insert(0) += c;
            }
        }
        let got: BTreeMap<String, usize> =
            v.entries().iter().map(|e| (e.ngram.clone(), e.corpus_freq)).collect();
        assert_eq!(got, total);
        let sorted: BTreeSet<&String> = total.keys().collect();
        for (id, g) in sorted.into_iter().enumerate() {
            assert_eq!(v.id(g), Some(id));
        }
    }

    #[test]
    fn bow_matches_sliding_window_counts() {
        let corpus = fixture_corpus();
        let v = build_vocabulary(&corpus, 3, 1, Normalization::None).unwrap();
        for s in &corpus {
            let expected: BTreeMap<usize, u32> = brute_counts(s, 3)
                .into_iter()
                .map(|(g, c)| (v.id(&g).unwrap(), c as u32))
                .collect();
            assert_eq!(bow_vector(&v, s).counts, expected);
        }
    }

    proptest! {
        #[test]
        fn ids_are_dense_and_stable(
            corpus in prop::collection::vec(prop::collection::vec("[a-d]{1,2}", 0..8), 1..10),
            n in 1usize..=3,
        ) {
            let a = build_vocabulary(&corpus, n, 1, Normalization::None).unwrap();
            let b = build_vocabulary(&corpus, n, 1, Normalization::None).unwrap();
            prop_assert_eq!(&a, &b);
            for (i, e) in a.entries().iter().enumerate() {
                prop_assert_eq!(e.id, i);
                prop_assert_eq!(a.id(&e.ngram), Some(i));
                let k = e.ngram.split(' ').count();
                prop_assert!((1..=n).contains(&k));
            }
        }

        #[test]
        fn normalized_weights_have_unit_norm(counts in prop::collection::btree_map(0usize..50, 1u32..20, 1..12)) {
            let bow = BowVector { counts };
            let norm: f64 = bow.l2_normalized().iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
