//! Link classification: causal versus associative, and the direction of
//! the relation, from stemmed bag-of-n-gram features.

mod logreg;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Payload};
use crate::error::{Error, Result};
use crate::evalkit::{self, Average, Metrics};
use crate::ingest::{clean_hypothesis_text, feature_tokens};
use crate::lexicon::{bow_vector, build_vocabulary, Normalization, Vocabulary};
use crate::rng::RNG_ALGORITHM;

pub use logreg::{train_logreg, LogisticModel, SparseVec, Task, GRADIENT_TOLERANCE, MAX_ITERATIONS};

pub const MAGIC: &[u8; 10] = b"HYPOLINKER";
pub const FORMAT_VERSION: u32 = 1;
pub const CAUSALITY_CLASSES: [&str; 2] = ["0", "1"];
pub const DIRECTION_CLASSES: [&str; 3] = ["pos", "neg", "non_lin"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Pos,
    Neg,
    NonLin,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Pos, Direction::Neg, Direction::NonLin];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        DIRECTION_CLASSES[self.index()]
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DIRECTION_CLASSES
            .iter()
            .position(|c| *c == s)
            .and_then(Direction::from_index)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown direction {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkLabel {
    pub causal: u8,
    pub direction: Direction,
}

/// One labeled hypothesis for link training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkExample {
    pub text: String,
    pub causal: u8,
    pub direction: Direction,
}

/// Tokens the linker sees: label stripped, lowercased, stop words removed.
pub fn link_tokens(text: &str) -> Vec<String> {
    feature_tokens(&clean_hypothesis_text(text))
}

/// Stemmed n-gram counts, L2-normalized.
pub fn featurize<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> SparseVec {
    bow_vector(vocab, tokens).l2_normalized()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkerConfig {
    pub max_n: usize,
    pub min_count: usize,
    pub grid: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Skip tuning and use these strengths (causality, direction).
    pub fixed_reg_strength: Option<(f64, f64)>,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            max_n: 3,
            min_count: 1,
            grid: vec![100.0, 10.0, 1.0, 0.1, 0.01],
            folds: 10,
            repeats: 3,
            seed: 42,
            fixed_reg_strength: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub reg_strength: f64,
    /// Mean over the k × repeats folds; F-1 is binary for causality and
    /// macro-averaged for direction.
    pub metrics: Metrics,
    /// Support-weighted F-1, reported for the direction task.
    pub weighted_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub task: Task,
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
}

fn task_classes(task: Task) -> &'static [&'static str] {
    match task {
        Task::Causality => &CAUSALITY_CLASSES,
        Task::Direction => &DIRECTION_CLASSES,
    }
}

fn score(task: Task, preds: &[usize], golds: &[usize]) -> Result<(Metrics, Option<f64>)> {
    match task {
        Task::Causality => Ok((evalkit::binary_metrics(preds, golds, 1)?, None)),
        Task::Direction => {
            let macro_m = evalkit::multiclass_metrics(preds, golds, 3, Average::Macro, None)?;
            let weighted = evalkit::multiclass_metrics(preds, golds, 3, Average::Weighted, None)?;
            Ok((macro_m, Some(weighted.f1)))
        }
    }
}

/// Grid search with `repeats` stratified k-fold rounds per grid point; the
/// best point has the highest mean F-1, ties going to the stronger penalty.
pub fn tune(
    xs: &[SparseVec],
    ys: &[usize],
    task: Task,
    n_features: usize,
    grid: &[f64],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("tuning grid is empty".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let classes = task_classes(task);
    for class in 0..classes.len() {
        let count = ys.iter().filter(|&&y| y == class).count();
        if count < k {
            return Err(Error::ClassTooSmall { class, count, k });
        }
    }
    let plans: Vec<evalkit::FoldPlan> = (0..repeats)
        .map(|r| evalkit::stratified_kfold(ys, k, seed.wrapping_add(r as u64)))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut fold_metrics = Vec::with_capacity(k * repeats);
        let mut weighted = Vec::new();
        for plan in &plans {
            for fold in 0..k {
                let (train, test) = plan.split(fold);
                let tx: Vec<SparseVec> = train.iter().map(|&i| xs[i].clone()).collect();
                let ty: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
                let model = train_logreg(&tx, &ty, task, classes, n_features, lambda)?;
                let preds: Vec<usize> = test.iter().map(|&i| model.predict(&xs[i])).collect();
                let golds: Vec<usize> = test.iter().map(|&i| ys[i]).collect();
                let (m, w) = score(task, &preds, &golds)?;
                fold_metrics.push(m);
                weighted.extend(w);
            }
        }
        points.push(GridPoint {
            reg_strength: lambda,
            metrics: evalkit::mean_metrics(&fold_metrics),
            weighted_f1: (!weighted.is_empty()).then(|| weighted.iter().sum::<f64>() / weighted.len() as f64),
        });
    }
    let best = points
        .iter()
        .fold(None::<&GridPoint>, |best, p| match best {
            Some(b) if b.metrics.f1 > p.metrics.f1 => Some(b),
            Some(b) if b.metrics.f1 == p.metrics.f1 && b.reg_strength >= p.reg_strength => Some(b),
            _ => Some(p),
        })
        .expect("grid is nonempty")
        .clone();
    Ok(TuneResult { task, points, best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkerModel {
    pub vocab: Vocabulary,
    pub causality: LogisticModel,
    pub direction: LogisticModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkerReport {
    pub causality: Option<TuneResult>,
    pub direction: Option<TuneResult>,
}

pub struct LinkerData {
    pub vocab: Vocabulary,
    pub xs: Vec<SparseVec>,
    pub causal: Vec<usize>,
    pub direction: Vec<usize>,
}

/// Builds the vocabulary over the whole corpus and featurizes every example.
pub fn prepare(corpus: &[LinkExample], cfg: &LinkerConfig) -> Result<LinkerData> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(bad) = corpus.iter().find(|e| e.causal > 1) {
        return Err(Error::InvalidConfig(format!("causal must be 0 or 1, got {}", bad.causal)));
    }
    let tokens: Vec<Vec<String>> = corpus.iter().map(|e| link_tokens(&e.text)).collect();
    let vocab = build_vocabulary(&tokens, cfg.max_n, cfg.min_count, Normalization::Stem)?;
    Ok(LinkerData {
        xs: tokens.iter().map(|t| featurize(&vocab, t)).collect(),
        causal: corpus.iter().map(|e| usize::from(e.causal)).collect(),
        direction: corpus.iter().map(|e| e.direction.index()).collect(),
        vocab,
    })
}

/// Tunes (unless fixed strengths are configured) and fits both models on
/// the full corpus.
pub fn train_linker(corpus: &[LinkExample], cfg: &LinkerConfig) -> Result<(LinkerModel, LinkerReport)> {
    let data = prepare(corpus, cfg)?;
    let n = data.vocab.len();
    let (report, (lc, ld)) = match cfg.fixed_reg_strength {
        Some(fixed) => (LinkerReport { causality: None, direction: None }, fixed),
        None => {
            let c = tune(&data.xs, &data.causal, Task::Causality, n, &cfg.grid, cfg.folds, cfg.repeats, cfg.seed)?;
            let d = tune(&data.xs, &data.direction, Task::Direction, n, &cfg.grid, cfg.folds, cfg.repeats, cfg.seed)?;
            let strengths = (c.best.reg_strength, d.best.reg_strength);
            (LinkerReport { causality: Some(c), direction: Some(d) }, strengths)
        }
    };
    let causality = train_logreg(&data.xs, &data.causal, Task::Causality, &CAUSALITY_CLASSES, n, lc)?;
    let direction = train_logreg(&data.xs, &data.direction, Task::Direction, &DIRECTION_CLASSES, n, ld)?;
    Ok((LinkerModel { vocab: data.vocab, causality, direction }, report))
}

impl LinkerModel {
    pub fn predict_link(&self, text: &str) -> LinkLabel {
        let x = featurize(&self.vocab, &link_tokens(text));
        LinkLabel {
            causal: self.causality.predict(&x) as u8,
            direction: Direction::from_index(self.direction.predict(&x)).unwrap_or(Direction::Pos),
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
        let meta = |m: &LogisticModel| ModelMeta {
            task: m.task,
            classes: m.classes.clone(),
            n_features: m.n_features,
            rows: m.rows(),
            reg_strength: m.reg_strength,
            iterations: m.iterations,
            converged: m.converged,
        };
        let header = Header {
            version: FORMAT_VERSION,
            rng: RNG_ALGORITHM.to_string(),
            vocab: self.vocab.clone(),
            causality: meta(&self.causality),
            direction: meta(&self.direction),
        };
        let mut payload = self.causality.params();
        payload.extend(self.direction.params());
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
        let mut p = Payload::new(payload);
        let mut build = |meta: ModelMeta| -> Result<LogisticModel> {
            if meta.n_features != header.vocab.len() {
                return Err(Error::BadModelFile("feature count does not match the vocabulary".into()));
            }
            let mut m = LogisticModel::zeroed(meta.task, meta.classes, meta.n_features, meta.reg_strength);
            if m.rows() != meta.rows {
                return Err(Error::BadModelFile("row count does not match the class list".into()));
            }
            m.set_params(&p.take(m.rows() * (meta.n_features + 1))?);
            m.iterations = meta.iterations;
            m.converged = meta.converged;
            Ok(m)
        };
        let causality = build(header.causality)?;
        let direction = build(header.direction)?;
        p.finish()?;
        Ok(LinkerModel { vocab: header.vocab, causality, direction })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    task: Task,
    classes: Vec<String>,
    n_features: usize,
    rows: usize,
    reg_strength: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    rng: String,
    vocab: Vocabulary,
    causality: ModelMeta,
    direction: ModelMeta,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::porter_stem;

    fn ex(text: &str, causal: u8, direction: Direction) -> LinkExample {
        LinkExample { text: text.into(), causal, direction }
    }

    fn corpus() -> Vec<LinkExample> {
        let subjects = ["firm size", "board diversity", "ceo tenure", "market orientation", "slack resources"];
        let objects = ["innovation", "profitability", "risk taking", "export intensity", "survival"];
        let mut out = Vec::new();
        for (i, s) in subjects.iter().enumerate() {
            for (j, o) in objects.iter().enumerate() {
                let text = match (i + j) % 4 {
                    0 => (format!("{s} is positively related to {o}"), 0, Direction::Pos),
                    1 => (format!("{s} has a negative effect on {o}"), 1, Direction::Neg),
                    2 => (format!("{s} will be negatively associated with {o}"), 0, Direction::Neg),
                    _ => (format!("{s} has an inverted u-shaped effect on {o}"), 1, Direction::NonLin),
                };
                out.push(ex(&text.0, text.1, text.2));
            }
        }
        out
    }

    #[test]
    fn featurize_examples() {
        let vocab = build_vocabulary(&[vec!["firm".to_string()]], 3, 1, Normalization::Stem).unwrap();
        assert!(featurize::<&str>(&vocab, &[]).is_empty());
        assert_eq!(featurize(&vocab, &["firm"]), vec![(0, 1.0)]);
    }

    #[test]
    fn featurize_matches_hand_pipeline() {
        let texts = ["Firm size is positively related to innovation", "Slack increases risk taking"];
        let tokens: Vec<Vec<String>> = texts.iter().map(|t| link_tokens(t)).collect();
        let vocab = build_vocabulary(&tokens, 3, 1, Normalization::Stem).unwrap();
        let stems: Vec<String> = tokens[0].iter().map(|t| porter_stem(t)).collect();
        let mut counts = std::collections::BTreeMap::new();
        for n in 1..=3 {
            for w in stems.windows(n) {
                *counts.entry(vocab.id(&w.join(" ")).unwrap()).or_insert(0.0) += 1.0;
            }
        }
        let norm: f64 = counts.values().map(|c: &f64| c * c).sum::<f64>().sqrt();
        let expected: SparseVec = counts.into_iter().map(|(k, v)| (k, v / norm)).collect();
        assert_eq!(featurize(&vocab, &tokens[0]), expected);
    }

    #[test]
    fn trains_and_predicts() {
        let cfg = LinkerConfig { folds: 3, repeats: 2, ..LinkerConfig::default() };
        let (model, report) = train_linker(&corpus(), &cfg).unwrap();
        assert_eq!(report.causality.as_ref().unwrap().points.len(), 5);
        assert!(report.direction.as_ref().unwrap().best.weighted_f1.is_some());
        let l = model.predict_link("H2: Ownership concentration has a negative effect on dividend payout.");
        assert_eq!(l, LinkLabel { causal: 1, direction: Direction::Neg });
        let l = model.predict_link("Board size is positively related to firm value.");
        assert_eq!(l, LinkLabel { causal: 0, direction: Direction::Pos });

        let bytes = model.to_bytes().unwrap();
        assert_eq!(&bytes[..10], MAGIC);
        let back = LinkerModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let (again, _) = train_linker(&corpus(), &cfg).unwrap();
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn tuning_rules() {
        let data = prepare(&corpus(), &LinkerConfig::default()).unwrap();
        let n = data.vocab.len();
        let one = tune(&data.xs, &data.causal, Task::Causality, n, &[0.5], 3, 1, 0).unwrap();
        assert_eq!(one.best.reg_strength, 0.5);
        assert!(matches!(
            tune(&data.xs, &data.direction, Task::Direction, n, &[1.0], 10, 1, 0),
            Err(Error::ClassTooSmall { k: 10, .. })
        ));
        let all = tune(&data.xs, &data.causal, Task::Causality, n, &[100.0, 1.0, 0.01], 3, 1, 0).unwrap();
        let max = all.points.iter().map(|p| p.metrics.f1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(all.best.metrics.f1, max);
        let tied: Vec<f64> = all.points.iter().filter(|p| p.metrics.f1 == max).map(|p| p.reg_strength).collect();
        assert_eq!(all.best.reg_strength, tied.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn direction_strings() {
        for d in Direction::ALL {
            assert_eq!(d.as_str().parse::<Direction>().unwrap(), d);
        }
        assert_eq!(serde_json::to_string(&Direction::NonLin).unwrap(), "\"non_lin\"");
        assert!("up".parse::<Direction>().is_err());
    }
}
