//! Template-generated corpora for training and evaluating every model
//! without the private annotated corpus.
//!
//! Hypotheses are assembled from construct pools and link phrases whose
//! causal/direction labels are known, so each sentence carries gold tags,
//! a gold link label and a gold detector label at once.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::detector::fnv1a;
use crate::error::Result;
use crate::ingest::{clean_hypothesis_text, feature_tokens};
use crate::lexicon::WordVectorTable;
use crate::linker::{Direction, LinkExample};
use crate::rng::{self, Rng};
use crate::tagger::{lookup_form, TagSequence};

const MODIFIERS: &[&str] = &[
    "firm", "board", "ceo", "employee", "organizational", "market", "financial", "environmental",
    "operational", "strategic", "venture", "family", "international", "social", "corporate",
    "managerial", "technological", "institutional", "stakeholder", "customer", "supplier",
    "network", "team", "product", "regional", "political", "knowledge", "entrepreneurial",
    "competitive", "human capital", "top management", "high involvement", "performance-enhancing",
    "absorptive", "female", "executive", "alliance", "subsidiary", "digital", "green",
];

const HEADS: &[&str] = &[
    "performance", "innovation", "turnover", "compensation", "diversity", "size", "growth",
    "profitability", "commitment", "satisfaction", "legitimacy", "survival", "ownership",
    "independence", "slack", "risk taking", "quit rates", "dismissal rates", "exports",
    "investment", "learning", "trust", "status", "reputation", "capability", "diversification",
    "tenure", "discretion", "practices", "orientation", "legislation", "disclosure", "identity",
    "cohesion", "engagement", "experience", "resources", "ambidexterity", "visibility", "change",
];

/// Link phrase, whether it asserts causation, and its direction.
const LINKS: &[(&str, u8, Direction)] = &[
    ("is positively related to", 0, Direction::Pos),
    ("will be positively associated with", 0, Direction::Pos),
    ("is positively correlated with", 0, Direction::Pos),
    ("will be associated with higher", 0, Direction::Pos),
    ("is associated with greater", 0, Direction::Pos),
    ("will be positively related to", 0, Direction::Pos),
    ("has a positive relationship with", 0, Direction::Pos),
    ("is negatively related to", 0, Direction::Neg),
    ("will be negatively associated with", 0, Direction::Neg),
    ("will be associated with lower", 0, Direction::Neg),
    ("is inversely related to", 0, Direction::Neg),
    ("is negatively correlated with", 0, Direction::Neg),
    ("has a negative relationship with", 0, Direction::Neg),
    ("has a curvilinear relationship with", 0, Direction::NonLin),
    ("has an inverted u-shaped relationship with", 0, Direction::NonLin),
    ("is nonlinearly related to", 0, Direction::NonLin),
    ("has a u-shaped relationship with", 0, Direction::NonLin),
    ("will have a positive effect on", 1, Direction::Pos),
    ("increases", 1, Direction::Pos),
    ("positively influences", 1, Direction::Pos),
    ("leads to higher", 1, Direction::Pos),
    ("exerts a positive influence on", 1, Direction::Pos),
    ("will increase", 1, Direction::Pos),
    ("enhances", 1, Direction::Pos),
    ("has a positive impact on", 1, Direction::Pos),
    ("will have a negative effect on", 1, Direction::Neg),
    ("reduces", 1, Direction::Neg),
    ("decreases", 1, Direction::Neg),
    ("negatively affects", 1, Direction::Neg),
    ("leads to lower", 1, Direction::Neg),
    ("has a negative impact on", 1, Direction::Neg),
    ("will reduce", 1, Direction::Neg),
    ("undermines", 1, Direction::Neg),
    ("has an inverted u-shaped effect on", 1, Direction::NonLin),
    ("has a curvilinear effect on", 1, Direction::NonLin),
];

const PREFIXES: &[&str] = &["in family firms,", "all else being equal,", "in emerging markets,", "over time,"];
const SUFFIXES: &[&str] = &["over time", "in emerging markets", "among small firms", "in the long run"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthHypothesis {
    /// Label such as "2" or "4a".
    pub number: String,
    /// Full sentence as it would appear in a document, label included.
    pub text: String,
    /// Surface tokens of the cleaned hypothesis, with gold tags.
    pub tagged: TagSequence,
    pub causal: u8,
    pub direction: Direction,
}

impl SynthHypothesis {
    pub fn link_example(&self) -> LinkExample {
        LinkExample {
            text: self.text.clone(),
            causal: self.causal,
            direction: self.direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorExample {
    pub text: String,
    pub label: u8,
}

impl DetectorExample {
    pub fn labeled(&self) -> crate::detector::LabeledSentence {
        crate::detector::LabeledSentence {
            tokens: feature_tokens(&self.text),
            label: self.label,
        }
    }
}

fn node(r: &mut Rng) -> Vec<String> {
    let mut words = Vec::new();
    if r.random_bool(0.8) {
        words.push(*MODIFIERS.choose(r).unwrap());
    }
    if r.random_bool(0.25) {
        words.push(*MODIFIERS.choose(r).unwrap());
    }
    words.push(*HEADS.choose(r).unwrap());
    if r.random_bool(0.15) {
        words.push("of");
        if r.random_bool(0.5) {
            words.push(*MODIFIERS.choose(r).unwrap());
        }
        words.push(*HEADS.choose(r).unwrap());
    }
    words.iter().flat_map(|w| w.split(' ')).map(str::to_string).collect()
}

/// One construct, or two joined by "and".
fn construct(r: &mut Rng) -> Vec<String> {
    let mut words = node(r);
    if r.random_bool(0.2) {
        words.push("and".into());
        words.extend(node(r));
    }
    words
}

fn push(out: &mut Vec<(String, u8)>, text: &str, tag: u8) {
    out.extend(text.split_whitespace().map(|w| (w.to_string(), tag)));
}

fn number_label(r: &mut Rng, n: usize) -> String {
    if r.random_bool(0.25) {
        format!("{n}{}", ['a', 'b', 'c'][r.random_range(0..3)])
    } else {
        n.to_string()
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// A single hypothesis with gold tags and link labels.
pub fn hypothesis(r: &mut Rng, n: usize) -> SynthHypothesis {
    let mut words: Vec<(String, u8)> = Vec::new();
    let cause = construct(r);
    let outcome = construct(r);
    let (causal, direction) = if r.random_bool(0.06) {
        // mediation: outcome relationship first, mediator (cause) last
        push(&mut words, "the", 0);
        outcome.iter().for_each(|w| words.push((w.clone(), 2)));
        push(&mut words, "relationship will be mediated by", 0);
        if r.random_bool(0.5) {
            push(&mut words, "the", 0);
        }
        cause.iter().for_each(|w| words.push((w.clone(), 1)));
        (1, Direction::NonLin)
    } else {
        let &(phrase, causal, direction) = LINKS.choose(r).unwrap();
        if r.random_bool(0.15) {
            push(&mut words, PREFIXES.choose(r).unwrap(), 0);
        }
        if r.random_bool(0.3) {
            push(&mut words, "the", 0);
        }
        cause.iter().for_each(|w| words.push((w.clone(), 1)));
        push(&mut words, phrase, 0);
        if r.random_bool(0.2) && !phrase.ends_with("higher") && !phrase.ends_with("lower") && !phrase.ends_with("greater") {
            push(&mut words, "the", 0);
        }
        outcome.iter().for_each(|w| words.push((w.clone(), 2)));
        if r.random_bool(0.15) {
            push(&mut words, SUFFIXES.choose(r).unwrap(), 0);
        }
        (causal, direction)
    };

    let number = number_label(r, n);
    let body = words.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
    let text = match r.random_range(0..5) {
        0 | 1 => format!("H{number}: {}.", capitalize(&body)),
        2 => format!("Hypothesis {number}: {}.", capitalize(&body)),
        3 => format!("Hypothesis {number}. {}.", capitalize(&body)),
        _ => format!("Proposition {number}: {}.", capitalize(&body)),
    };
    let clean = clean_hypothesis_text(&text);
    let tokens: Vec<String> = clean.split_whitespace().map(str::to_string).collect();
    debug_assert_eq!(tokens.len(), words.len());
    SynthHypothesis {
        number,
        text,
        tagged: TagSequence {
            tokens,
            tags: words.iter().map(|(_, t)| *t).collect(),
        },
        causal,
        direction,
    }
}

fn trigger(r: &mut Rng, n: usize) -> String {
    match r.random_range(0..3) {
        0 => format!("Hypothesis {n}"),
        1 => format!("H{n}"),
        _ => format!("Hypothesis {}", number_label(r, n)),
    }
}

/// A results/discussion sentence that mentions a hypothesis without stating one.
pub fn discussion(r: &mut Rng, n: usize) -> String {
    let h = trigger(r, n);
    let a = construct(r).join(" ");
    let b = construct(r).join(" ");
    let beta = r.random_range(5..60);
    let p = ["0.01", "0.05", "0.001", "0.10"].choose(r).unwrap().to_string();
    let table = r.random_range(1..8);
    let model = r.random_range(1..7);
    let &(phrase, _, _) = LINKS.choose(r).unwrap();
    let sentence = match r.random_range(0..16) {
        0 => format!("These results support {h}."),
        1 => format!(
            "{h} is therefore {}.",
            ["supported", "not supported", "partially supported", "rejected"].choose(r).unwrap()
        ),
        2 => format!(
            "Consistent with {h}, the coefficient for {a} is {} and significant (β = 0.{beta}, p < {p}).",
            ["positive", "negative"].choose(r).unwrap()
        ),
        3 => format!("In Model {model}, we test {h} by adding {a} to the regression."),
        4 => format!("Table {table} reports the estimates used to test {h}."),
        5 => format!(
            "We find {} support for {h}, as {a} was significantly related to {b} in the full sample.",
            ["strong", "weak", "mixed"].choose(r).unwrap()
        ),
        6 => format!(
            "To test {h}, we regressed {b} on {a} using {} models with robust standard errors.",
            ["fixed effects", "random effects", "logit", "OLS"].choose(r).unwrap()
        ),
        7 => format!("The results in Table {table} confirm the prediction of {h} regarding {a}."),
        8 => format!("The interaction term for {h} is positive but not significant (p = 0.{beta})."),
        9 => format!("Figure {table} plots the marginal effect of {a} that we used to examine {h}."),
        10 => format!("Models {model} and {} provide a robustness check of {h} with lagged measures of {a}.", model + 1),
        11 => format!("Contrary to {h}, the data show no significant difference in {b} across the sample (p = 0.{beta})."),
        12 => format!("{h} predicted that {a} {phrase} {b}."),
        13 => format!("In line with {h}, prior studies suggest that {a} {phrase} {b}."),
        14 => format!("{h} argued that {a} {phrase} {b}, but our estimates do not support this claim."),
        _ => format!("As expected in {h}, {a} {phrase} {b} in our sample."),
    };
    capitalize(&sentence)
}

pub const AMBIGUOUS_NEGATIVE_RATE: f64 = 0.05;

/// `n_pos` hypothesis sentences followed by `n_neg` discussion sentences,
/// interleaved by a seeded shuffle.
pub fn detector_corpus(n_pos: usize, n_neg: usize, seed: u64) -> Vec<DetectorExample> {
    let mut r = rng::derived(seed, 0xD0C5);
    let mut out: Vec<DetectorExample> = (0..n_pos)
        .map(|i| DetectorExample { text: hypothesis(&mut r, i % 9 + 1).text, label: 1 })
        .collect();
    // a slice of negatives are hypothesis-shaped claims that annotators rejected,
    // so the two classes overlap the way real candidate sentences do
    out.extend((0..n_neg).map(|i| {
        let text = if r.random_bool(AMBIGUOUS_NEGATIVE_RATE) {
            hypothesis(&mut r, i % 9 + 1).text
        } else {
            discussion(&mut r, i % 9 + 1)
        };
        DetectorExample { text, label: 0 }
    }));
    rand::seq::SliceRandom::shuffle(out.as_mut_slice(), &mut r);
    out
}

pub fn hypotheses(n: usize, seed: u64) -> Vec<SynthHypothesis> {
    let mut r = rng::derived(seed, 0x7A66);
    (0..n).map(|i| hypothesis(&mut r, i % 9 + 1)).collect()
}

pub fn tagger_corpus(n: usize, seed: u64) -> Vec<TagSequence> {
    hypotheses(n, seed).into_iter().map(|h| h.tagged).collect()
}

/// Link examples with every direction class represented at least `min_per_class` times.
pub fn linker_corpus(n: usize, min_per_class: usize, seed: u64) -> Vec<LinkExample> {
    let mut r = rng::derived(seed, 0x11AC);
    let mut out: Vec<LinkExample> = (0..n).map(|i| hypothesis(&mut r, i % 9 + 1).link_example()).collect();
    for d in Direction::ALL {
        let mut guard = 0;
        while out.iter().filter(|e| e.direction == d).count() < min_per_class && guard < 100_000 {
            let h = hypothesis(&mut r, 1);
            if h.direction == d {
                out.push(h.link_example());
            }
            guard += 1;
        }
    }
    out
}

/// Every lookup form that the generators can emit.
pub fn vocabulary() -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    let mut add = |s: &str| {
        for w in s.split_whitespace() {
            let f = lookup_form(w);
            if !f.is_empty() {
                words.insert(f);
            }
        }
    };
    MODIFIERS.iter().chain(HEADS).chain(PREFIXES).chain(SUFFIXES).for_each(|s| add(s));
    LINKS.iter().for_each(|(s, _, _)| add(s));
    ["the", "and", "of", "relationship will be mediated by"].iter().for_each(|s| add(s));
    words
}

/// Seeded pseudo-embeddings; each word's vector depends only on the word
/// and the seed.
pub fn word_vectors<I, S>(words: I, dim: usize, seed: u64) -> Result<WordVectorTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let unique: BTreeSet<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
    WordVectorTable::from_entries(
        dim,
        unique.into_iter().map(|w| {
            let mut r = rng::derived(seed, fnv1a(w.as_bytes()));
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            (w, v)
        }),
    )
}
