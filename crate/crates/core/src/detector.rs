//! fastText-style supervised hypothesis detector.
//!
//! A sentence is represented by the mean of its word (and hashed word
//! n-gram) embeddings; that average is the hidden layer, fed to a linear
//! two-label output head. Training is plain SGD with a linearly decaying
//! learning rate, using either a full softmax or negative sampling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::container::{self, Payload};
use crate::error::{Error, Result};
use crate::evalkit::{self, Metrics};
use crate::linalg::{dot, sigmoid, softmax_in_place};
use crate::rng::{self, RNG_ALGORITHM};

pub const MAGIC: &[u8; 10] = b"HYPODETECT";
pub const FORMAT_VERSION: u32 = 1;

const NEGATIVE_TABLE_SIZE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Softmax,
    NegativeSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Word n-gram order; n-grams above 1 are hashed into buckets.
    pub ngram: usize,
    pub lr: f64,
    pub dim: usize,
    pub loss: Loss,
    pub epochs: usize,
    pub neg_samples: usize,
    pub bucket_count: u64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            ngram: 1,
            lr: 0.3,
            dim: 120,
            loss: Loss::NegativeSampling,
            epochs: 5,
            neg_samples: 5,
            bucket_count: 2_000_003,
            seed: 42,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.lr.is_nan() || self.lr <= 0.0 {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.dim == 0 || self.epochs == 0 || self.ngram == 0 {
            return fail("dim, epochs and ngram must be at least 1".into());
        }
        if self.loss == Loss::NegativeSampling && self.neg_samples == 0 {
            return fail("neg_samples must be at least 1 with negative sampling".into());
        }
        if self.ngram > 1 && self.bucket_count == 0 {
            return fail("bucket_count must be positive for n-grams above 1".into());
        }
        Ok(())
    }
}

/// Training example; tokens are expected to be normalized already.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    /// Probability of the reported label.
    pub prob: f64,
    pub hypothesis_prob: f64,
    /// No known feature: the scores are degenerate.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Feature {
    Word(usize),
    Bucket(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    config: DetectorConfig,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// `vocab.len() × dim`, row-major.
    words: Vec<f64>,
    /// Materialized n-gram bucket rows; other buckets keep their seeded
    /// initial value, regenerated on demand.
    buckets: BTreeMap<u64, Vec<f64>>,
    /// `2 × dim`, one row per label.
    output: Vec<f64>,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn init_row(seed: u64, key: u64, dim: usize) -> Vec<f64> {
    let mut r = rng::derived(seed, key);
    let bound = 1.0 / dim as f64;
    (0..dim).map(|_| r.random_range(-bound..bound)).collect()
}

const BUCKET_KEY: u64 = 1 << 63;

/// Loss and gradient of one example under the softmax loss.
pub(crate) struct SoftmaxGradient {
    pub loss: f64,
    /// dL/d(hidden)
    pub hidden: Vec<f64>,
    /// dL/d(output), `2 × dim`
    pub output: Vec<f64>,
}

impl DetectorModel {
    /// Model with zero input and output weights over `vocab`.
    pub fn zeroed(config: DetectorConfig, vocab: Vec<String>) -> Self {
        let mut vocab = vocab;
        vocab.sort();
        vocab.dedup();
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let dim = config.dim;
        DetectorModel {
            words: vec![0.0; vocab.len() * dim],
            output: vec![0.0; 2 * dim],
            buckets: BTreeMap::new(),
            config,
            vocab,
            index,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_row_mut(&mut self, token: &str) -> Option<&mut [f64]> {
        let dim = self.config.dim;
        let i = *self.index.get(token)?;
        Some(&mut self.words[i * dim..(i + 1) * dim])
    }

    /// Output row of `label` (0 or 1).
    pub fn output_row_mut(&mut self, label: usize) -> &mut [f64] {
        let dim = self.config.dim;
        &mut self.output[label * dim..(label + 1) * dim]
    }

    /// Features of a token list in canonical (sorted) order.
    fn features<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Feature> {
        let mut out: Vec<Feature> = tokens
            .iter()
            .filter_map(|t| self.index.get(t.as_ref()).map(|&i| Feature::Word(i)))
            .collect();
        for n in 2..=self.config.ngram {
            for window in tokens.windows(n) {
                let gram: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
                let h = fnv1a(gram.join(" ").as_bytes()) % self.config.bucket_count;
                out.push(Feature::Bucket(h));
            }
        }
        out.sort_unstable();
        out
    }

    fn row(&self, f: Feature) -> std::borrow::Cow<'_, [f64]> {
        let dim = self.config.dim;
        match f {
            Feature::Word(i) => std::borrow::Cow::Borrowed(&self.words[i * dim..(i + 1) * dim]),
            Feature::Bucket(b) => match self.buckets.get(&b) {
                Some(row) => std::borrow::Cow::Borrowed(row),
                None => std::borrow::Cow::Owned(init_row(self.config.seed, BUCKET_KEY | b, dim)),
            },
        }
    }

    fn row_mut(&mut self, f: Feature) -> &mut [f64] {
        let dim = self.config.dim;
        match f {
            Feature::Word(i) => &mut self.words[i * dim..(i + 1) * dim],
            Feature::Bucket(b) => {
                let seed = self.config.seed;
                self.buckets
                    .entry(b)
                    .or_insert_with(|| init_row(seed, BUCKET_KEY | b, dim))
            }
        }
    }

    fn hidden(&self, features: &[Feature]) -> Vec<f64> {
        let mut h = vec![0.0; self.config.dim];
        for &f in features {
            for (acc, v) in h.iter_mut().zip(self.row(f).iter()) {
                *acc += v;
            }
        }
        if !features.is_empty() {
            let n = features.len() as f64;
            h.iter_mut().for_each(|x| *x /= n);
        }
        h
    }

    fn scores(&self, hidden: &[f64]) -> [f64; 2] {
        let dim = self.config.dim;
        [dot(&self.output[..dim], hidden), dot(&self.output[dim..], hidden)]
    }

    /// Softmax over the two output scores; ties go to label 0.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        let features = self.features(tokens);
        let hidden = self.hidden(&features);
        let mut p = self.scores(&hidden);
        softmax_in_place(&mut p);
        let label = u8::from(p[1] > p[0]);
        Prediction {
            label,
            prob: p[usize::from(label)],
            hypothesis_prob: p[1],
            flagged: features.is_empty(),
        }
    }

    pub fn hypothesis_prob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        self.predict(tokens).hypothesis_prob
    }

    pub(crate) fn softmax_gradient(&self, hidden: &[f64], label: usize) -> SoftmaxGradient {
        let dim = self.config.dim;
        let mut p = self.scores(hidden);
        softmax_in_place(&mut p);
        let mut grad_hidden = vec![0.0; dim];
        let mut grad_output = vec![0.0; 2 * dim];
        for c in 0..2 {
            let delta = p[c] - if c == label { 1.0 } else { 0.0 };
            let w = &self.output[c * dim..(c + 1) * dim];
            for k in 0..dim {
                grad_hidden[k] += delta * w[k];
                grad_output[c * dim + k] = delta * hidden[k];
            }
        }
        SoftmaxGradient {
            loss: -p[label].max(1e-300).ln(),
            hidden: grad_hidden,
            output: grad_output,
        }
    }

    /// Binary logistic step on one output row; accumulates into `grad_hidden`.
    fn logistic_step(&mut self, hidden: &[f64], class: usize, target: bool, lr: f64, grad_hidden: &mut [f64]) -> f64 {
        let dim = self.config.dim;
        let row = &mut self.output[class * dim..(class + 1) * dim];
        let s = sigmoid(dot(row, hidden));
        let alpha = lr * (f64::from(u8::from(target)) - s);
        for k in 0..dim {
            grad_hidden[k] += alpha * row[k];
            row[k] += alpha * hidden[k];
        }
        if target {
            -s.max(1e-300).ln()
        } else {
            -(1.0 - s).max(1e-300).ln()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (header, payload) = self.to_parts();
        container::save(path, MAGIC, &header, &payload)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (header, payload) = self.to_parts();
        let mut buf = Vec::new();
        container::write(&mut buf, MAGIC, &header, &payload)?;
        Ok(buf)
    }

    fn to_parts(&self) -> (Header, Vec<f64>) {
        let header = Header {
            version: FORMAT_VERSION,
            rng: RNG_ALGORITHM.to_string(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            buckets: self.buckets.keys().copied().collect(),
            tensors: "word rows, bucket rows in listed order, output rows (label 0, label 1)".into(),
        };
        let mut payload = self.words.clone();
        for row in self.buckets.values() {
            payload.extend_from_slice(row);
        }
        payload.extend_from_slice(&self.output);
        (header, payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload) = container::load::<Header>(path, MAGIC, FORMAT_VERSION)?;
        Self::from_parts(header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode::<Header>(bytes, MAGIC, FORMAT_VERSION)?;
        Self::from_parts(header, &payload)
    }

    fn from_parts(header: Header, payload: &[f64]) -> Result<Self> {
        header.config.validate()?;
        let dim = header.config.dim;
        let mut model = DetectorModel::zeroed(header.config, header.vocab);
        let mut p = Payload::new(payload);
        model.words = p.take(model.vocab.len() * dim)?;
        for b in header.buckets {
            model.buckets.insert(b, p.take(dim)?);
        }
        model.output = p.take(2 * dim)?;
        p.finish()?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    rng: String,
    config: DetectorConfig,
    vocab: Vec<String>,
    buckets: Vec<u64>,
    tensors: String,
}

fn check_corpus(corpus: &[LabeledSentence]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(bad) = corpus.iter().find(|s| s.label > 1) {
        return Err(Error::InvalidConfig(format!("label {} is not 0 or 1", bad.label)));
    }
    let positives = corpus.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == corpus.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub fn train_detector(corpus: &[LabeledSentence], cfg: &DetectorConfig) -> Result<DetectorModel> {
    train_detector_logged(corpus, cfg).map(|(m, _)| m)
}

/// Trains a detector and returns the mean training loss of every epoch.
pub fn train_detector_logged(corpus: &[LabeledSentence], cfg: &DetectorConfig) -> Result<(DetectorModel, Vec<f64>)> {
    cfg.validate()?;
    check_corpus(corpus)?;

    let vocab: Vec<String> = corpus.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    let mut model = DetectorModel::zeroed(cfg.clone(), vocab);
    let dim = cfg.dim;
    for i in 0..model.vocab.len() {
        let row = init_row(cfg.seed, i as u64, dim);
        model.words[i * dim..(i + 1) * dim].copy_from_slice(&row);
    }

    let negatives = negative_table(corpus);
    let mut rng = rng::derived(cfg.seed, 0xD37E_C7);
    let total = (cfg.epochs * corpus.len()) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let lr = cfg.lr * (1.0 - step as f64 / total);
            step += 1;
            let example = &corpus[i];
            let features = model.features(&example.tokens);
            if features.is_empty() {
                continue;
            }
            let hidden = model.hidden(&features);
            let label = usize::from(example.label);
            let grad_hidden = match cfg.loss {
                Loss::Softmax => {
                    let g = model.softmax_gradient(&hidden, label);
                    loss_sum += g.loss;
                    for (w, d) in model.output.iter_mut().zip(&g.output) {
                        *w -= lr * d;
                    }
                    // ascent direction, matching the negative-sampling branch
                    g.hidden.iter().map(|d| -lr * d).collect::<Vec<_>>()
                }
                Loss::NegativeSampling => {
                    let mut grad = vec![0.0; dim];
                    loss_sum += model.logistic_step(&hidden, label, true, lr, &mut grad);
                    for _ in 0..cfg.neg_samples {
                        let neg = loop {
                            let candidate = negatives[rng.random_range(0..negatives.len())];
                            if candidate != label {
                                break candidate;
                            }
                        };
                        loss_sum += model.logistic_step(&hidden, neg, false, lr, &mut grad);
                    }
                    grad
                }
            };
            let scale = 1.0 / features.len() as f64;
            for &f in &features {
                for (w, g) in model.row_mut(f).iter_mut().zip(&grad_hidden) {
                    *w += g * scale;
                }
            }
        }
        epoch_losses.push(loss_sum / corpus.len() as f64);
    }
    Ok((model, epoch_losses))
}

/// Labels repeated in proportion to the square root of their counts.
fn negative_table(corpus: &[LabeledSentence]) -> Vec<usize> {
    let mut counts = [0usize; 2];
    for s in corpus {
        counts[usize::from(s.label)] += 1;
    }
    let z: f64 = counts.iter().map(|&c| (c as f64).sqrt()).sum();
    let mut table = Vec::with_capacity(NEGATIVE_TABLE_SIZE);
    for (label, &c) in counts.iter().enumerate() {
        let share = ((c as f64).sqrt() / z * NEGATIVE_TABLE_SIZE as f64).ceil() as usize;
        table.extend(std::iter::repeat_n(label, share));
    }
    table
}

pub fn evaluate(model: &DetectorModel, data: &[LabeledSentence]) -> Result<Metrics> {
    let preds: Vec<usize> = data.iter().map(|s| usize::from(model.predict(&s.tokens).label)).collect();
    let golds: Vec<usize> = data.iter().map(|s| usize::from(s.label)).collect();
    evalkit::binary_metrics(&preds, &golds, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<Metrics>,
    /// Equal-weight mean over folds.
    pub mean: Metrics,
    /// Metrics over the pooled out-of-fold predictions.
    pub pooled: Metrics,
}

/// k-fold cross-validation; fold `i` trains on the other folds.
pub fn cross_validate_detector(corpus: &[LabeledSentence], cfg: &DetectorConfig, k: usize) -> Result<CvReport> {
    let plan = evalkit::kfold(corpus.len(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut preds = vec![0usize; corpus.len()];
    for fold in 0..k {
        let (train, test) = plan.split(fold);
        let train: Vec<LabeledSentence> = train.iter().map(|&i| corpus[i].clone()).collect();
        let model = train_detector(&train, cfg)?;
        let test_set: Vec<LabeledSentence> = test.iter().map(|&i| corpus[i].clone()).collect();
        folds.push(evaluate(&model, &test_set)?);
        for &i in &test {
            preds[i] = usize::from(model.predict(&corpus[i].tokens).label);
        }
    }
    let golds: Vec<usize> = corpus.iter().map(|s| usize::from(s.label)).collect();
    Ok(CvReport {
        mean: evalkit::mean_metrics(&folds),
        pooled: evalkit::binary_metrics(&preds, &golds, 1)?,
        folds,
    })
}

/// Single train/test split with `train_fraction` of the data for training.
pub fn holdout_detector(corpus: &[LabeledSentence], cfg: &DetectorConfig, train_fraction: f64) -> Result<Metrics> {
    let (train, test) = evalkit::holdout_split(corpus.len(), train_fraction, cfg.seed)?;
    let train: Vec<LabeledSentence> = train.iter().map(|&i| corpus[i].clone()).collect();
    let test: Vec<LabeledSentence> = test.iter().map(|&i| corpus[i].clone()).collect();
    let model = train_detector(&train, cfg)?;
    evaluate(&model, &test)
}
