//! Cause/outcome token tagger: frozen word vectors feeding two stacked
//! bidirectional LSTM layers and a per-position softmax over
//! {0 = other, 1 = cause, 2 = outcome}.

mod lstm;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Payload};
use crate::error::{Error, Result};
use crate::evalkit::{self, ClassMetrics, Confusion};
use crate::ingest::strip_punct;
use crate::lexicon::WordVectorTable;
use crate::linalg::{argmax, softmax_in_place};
use crate::rng::{self, Rng, RNG_ALGORITHM};

use lstm::{axpy, Cell, CellGrad};

pub const MAGIC: &[u8; 10] = b"HYPOTAGGER";
pub const FORMAT_VERSION: u32 = 1;
pub const N_TAGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    pub pad_len: usize,
    pub lstm1_units: usize,
    pub lstm2_units: usize,
    pub spatial_dropout: f64,
    pub recurrent_dropout: f64,
    pub optimizer_lr: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of the training data held out for the per-epoch validation score.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            pad_len: 50,
            lstm1_units: 32,
            lstm2_units: 128,
            spatial_dropout: 0.5,
            recurrent_dropout: 0.1,
            optimizer_lr: 0.001,
            rho: 0.9,
            epsilon: 1e-7,
            batch_size: 32,
            epochs: 50,
            validation_fraction: 0.1,
            seed: 42,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.pad_len == 0 {
            return fail("pad_len must be at least 1");
        }
        if self.lstm1_units == 0 || self.lstm2_units == 0 {
            return fail("LSTM unit counts must be positive");
        }
        if !(0.0..1.0).contains(&self.spatial_dropout) || !(0.0..1.0).contains(&self.recurrent_dropout) {
            return fail("dropout rates must lie in [0, 1)");
        }
        if self.optimizer_lr.is_nan() || self.optimizer_lr <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return fail("optimizer_lr, batch_size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<u8>,
}

impl TagSequence {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.tags.len() {
            return Err(Error::LengthMismatch {
                left: self.tokens.len(),
                right: self.tags.len(),
            });
        }
        if let Some((position, &tag)) = self.tags.iter().enumerate().find(|(_, &t)| t as usize >= N_TAGS) {
            return Err(Error::InvalidTag { position, tag });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpans {
    pub variable_1: String,
    pub variable_2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Token accuracy of the dropout-active training passes.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub train_loss: f64,
}

pub fn write_epoch_log<W: Write>(log: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_acc", "val_acc"])?;
    for e in log {
        let val = e.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
        w.write_record([e.epoch.to_string(), format!("{:.6}", e.train_acc), val])?;
    }
    w.flush().map_err(|e| Error::io("<epoch log>", e))?;
    Ok(())
}

/// Lookup form of a surface token: lowercase with edge punctuation removed.
pub fn lookup_form(token: &str) -> String {
    strip_punct(token).to_lowercase()
}

/// Right-pads with `pad` or keeps the first `pad_len` indices.
pub fn pad_or_truncate(indices: &[usize], pad_len: usize, pad: usize) -> Vec<usize> {
    let mut out: Vec<usize> = indices.iter().copied().take(pad_len).collect();
    out.resize(pad_len, pad);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Parameter layout: for layer 1 then 2, forward then backward direction,
/// kernel (4H × I), recurrent kernel (4H × H) and bias (4H); then the
/// dense kernel (3 × 2H₂) and bias (3).
fn layout(emb_dim: usize, cfg: &TaggerConfig) -> Vec<TensorInfo> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, rows: usize, cols: usize| {
        out.push(TensorInfo { name, rows, cols, offset });
        offset += rows * cols;
    };
    let layers = [(1, emb_dim, cfg.lstm1_units), (2, 2 * cfg.lstm1_units, cfg.lstm2_units)];
    for (layer, input, hidden) in layers {
        for dir in ["fwd", "bwd"] {
            push(format!("lstm{layer}_{dir}_kernel"), 4 * hidden, input);
            push(format!("lstm{layer}_{dir}_recurrent"), 4 * hidden, hidden);
            push(format!("lstm{layer}_{dir}_bias"), 4 * hidden, 1);
        }
    }
    push("dense_kernel".into(), N_TAGS, 2 * cfg.lstm2_units);
    push("dense_bias".into(), N_TAGS, 1);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    config: TaggerConfig,
    emb_dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// `vocab.len() × emb_dim`; the OOV and PAD rows are implicit zeros.
    embeddings: Vec<f64>,
    tensors: Vec<TensorInfo>,
    params: Vec<f64>,
}

struct Dropout {
    spatial: Option<Vec<f64>>,
    /// Layer 1 fwd, layer 1 bwd, layer 2 fwd, layer 2 bwd.
    recurrent: [Option<Vec<f64>>; 4],
}

fn inverted_mask(rng: &mut Rng, n: usize, rate: f64) -> Option<Vec<f64>> {
    (rate > 0.0).then(|| {
        let keep = 1.0 / (1.0 - rate);
        (0..n).map(|_| if rng.random_bool(rate) { 0.0 } else { keep }).collect()
    })
}

struct SentenceResult {
    probs: Vec<[f64; N_TAGS]>,
    loss: f64,
    correct: usize,
    grad: Option<Vec<f64>>,
}

impl TaggerModel {
    /// Fresh model: Glorot-uniform kernels, orthogonal recurrent kernels,
    /// zero biases except a forget-gate bias of one.
    pub fn new(vectors: &WordVectorTable, cfg: &TaggerConfig) -> Result<Self> {
        let mut model = Self::zeroed(vectors, cfg)?;
        let mut r = rng::derived(cfg.seed, 0x7A66_1E55);
        for t in model.tensors.clone() {
            let slot = &mut model.params[t.range()];
            if t.name.ends_with("_bias") {
                if t.name.starts_with("lstm") {
                    let h = t.rows / 4;
                    slot[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
            } else if t.name.ends_with("_recurrent") {
                slot.copy_from_slice(&orthogonal(&mut r, t.rows, t.cols));
            } else {
                let limit = (6.0 / (t.rows + t.cols) as f64).sqrt();
                slot.iter_mut().for_each(|v| *v = r.random_range(-limit..limit));
            }
        }
        Ok(model)
    }

    /// Model with every trainable weight at zero.
    pub fn zeroed(vectors: &WordVectorTable, cfg: &TaggerConfig) -> Result<Self> {
        cfg.validate()?;
        let emb_dim = vectors.dim();
        if emb_dim == 0 {
            return Err(Error::InvalidConfig("word vectors must have dimension ≥ 1".into()));
        }
        let vocab = vectors.tokens().to_vec();
        let mut embeddings = Vec::with_capacity(vocab.len() * emb_dim);
        for i in 0..vocab.len() {
            embeddings.extend_from_slice(vectors.row(i));
        }
        let tensors = layout(emb_dim, cfg);
        let n_params = tensors.last().map_or(0, |t| t.offset + t.len());
        Ok(TaggerModel {
            index: vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            config: cfg.clone(),
            emb_dim,
            vocab,
            embeddings,
            tensors,
            params: vec![0.0; n_params],
        })
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    pub fn oov_index(&self) -> usize {
        self.vocab.len()
    }

    pub fn pad_index(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn token_index(&self, token: &str) -> usize {
        self.index.get(&lookup_form(token)).copied().unwrap_or(self.oov_index())
    }

    /// Padded (or truncated) index sequence of `pad_len` entries.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let idx: Vec<usize> = tokens.iter().map(|t| self.token_index(t.as_ref())).collect();
        pad_or_truncate(&idx, self.config.pad_len, self.pad_index())
    }

    fn tensor(&self, i: usize) -> &[f64] {
        &self.params[self.tensors[i].range()]
    }

    fn cell(&self, layer: usize, dir: usize) -> Cell<'_> {
        let base = (layer * 2 + dir) * 3;
        let w = &self.tensors[base];
        Cell {
            w: self.tensor(base),
            u: self.tensor(base + 1),
            b: self.tensor(base + 2),
            input: w.cols,
            hidden: w.rows / 4,
        }
    }

    fn embed(&self, indices: &[usize], mask: Option<&[f64]>) -> Vec<f64> {
        let d = self.emb_dim;
        let mut xs = vec![0.0; indices.len() * d];
        for (t, &i) in indices.iter().enumerate() {
            if i < self.vocab.len() {
                let row = &self.embeddings[i * d..(i + 1) * d];
                let dst = &mut xs[t * d..(t + 1) * d];
                match mask {
                    Some(m) => dst.iter_mut().zip(row).zip(m).for_each(|((x, v), k)| *x = v * k),
                    None => dst.copy_from_slice(row),
                }
            }
        }
        xs
    }

    /// Forward pass (and, with `tags`, loss and gradient) over the real
    /// tokens of one sentence. The loss is summed over tokens.
    fn run(&self, indices: &[usize], tags: Option<&[u8]>, dropout: Option<&Dropout>) -> SentenceResult {
        let len = indices.len();
        let h1 = self.config.lstm1_units;
        let h2 = self.config.lstm2_units;
        let rmask = |k: usize| dropout.and_then(|d| d.recurrent[k].as_deref());

        let x0 = self.embed(indices, dropout.and_then(|d| d.spatial.as_deref()));
        let c1f = lstm::forward(&self.cell(0, 0), &x0, len, false, rmask(0));
        let c1b = lstm::forward(&self.cell(0, 1), &x0, len, true, rmask(1));
        let x1 = concat(&c1f.h, &c1b.h, len, h1);
        let c2f = lstm::forward(&self.cell(1, 0), &x1, len, false, rmask(2));
        let c2b = lstm::forward(&self.cell(1, 1), &x1, len, true, rmask(3));
        let x2 = concat(&c2f.h, &c2b.h, len, h2);

        let n_dense = self.tensors.len() - 2;
        let dense_w = self.tensor(n_dense);
        let dense_b = self.tensor(n_dense + 1);
        let width = 2 * h2;
        let mut probs = Vec::with_capacity(len);
        for t in 0..len {
            let y = &x2[t * width..(t + 1) * width];
            let mut z = [0.0; N_TAGS];
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = dense_b[c] + crate::linalg::dot(&dense_w[c * width..(c + 1) * width], y);
            }
            softmax_in_place(&mut z);
            probs.push(z);
        }

        let Some(tags) = tags else {
            return SentenceResult { probs, loss: 0.0, correct: 0, grad: None };
        };

        let mut loss = 0.0;
        let mut correct = 0;
        let mut grad = vec![0.0; self.params.len()];
        let mut dx2 = vec![0.0; len * width];
        {
            let (dw_range, db_range) = (self.tensors[n_dense].range(), self.tensors[n_dense + 1].range());
            for t in 0..len {
                let gold = usize::from(tags[t]);
                loss -= probs[t][gold].max(1e-300).ln();
                correct += usize::from(argmax(&probs[t]) == gold);
                let y = &x2[t * width..(t + 1) * width];
                for c in 0..N_TAGS {
                    let dz = probs[t][c] - if c == gold { 1.0 } else { 0.0 };
                    grad[db_range.start + c] += dz;
                    axpy(dz, y, &mut grad[dw_range.start + c * width..dw_range.start + (c + 1) * width]);
                    axpy(dz, &dense_w[c * width..(c + 1) * width], &mut dx2[t * width..(t + 1) * width]);
                }
            }
        }

        let (dh2f, dh2b) = split(&dx2, len, h2);
        let mut dx1 = self
            .backward_dir(&mut grad, 1, 0, &c2f, &x1, &dh2f, len, rmask(2), true)
            .expect("dx requested");
        let dx1b = self
            .backward_dir(&mut grad, 1, 1, &c2b, &x1, &dh2b, len, rmask(3), true)
            .expect("dx requested");
        dx1.iter_mut().zip(&dx1b).for_each(|(a, b)| *a += b);
        let (dh1f, dh1b) = split(&dx1, len, h1);
        self.backward_dir(&mut grad, 0, 0, &c1f, &x0, &dh1f, len, rmask(0), false);
        self.backward_dir(&mut grad, 0, 1, &c1b, &x0, &dh1b, len, rmask(1), false);

        SentenceResult { probs, loss, correct, grad: Some(grad) }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_dir(
        &self,
        grad: &mut [f64],
        layer: usize,
        dir: usize,
        cache: &lstm::DirCache,
        xs: &[f64],
        dh: &[f64],
        len: usize,
        rmask: Option<&[f64]>,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let base = (layer * 2 + dir) * 3;
        let (rw, ru, rb) = (
            self.tensors[base].range(),
            self.tensors[base + 1].range(),
            self.tensors[base + 2].range(),
        );
        // the three tensors are contiguous: kernel, recurrent, bias
        let block = &mut grad[rw.start..rb.end];
        let (gw, rest) = block.split_at_mut(rw.len());
        let (gu, gb) = rest.split_at_mut(ru.len());
        let mut cg = CellGrad { w: gw, u: gu, b: gb };
        lstm::backward(&self.cell(layer, dir), cache, xs, dh, len, dir == 1, rmask, &mut cg, want_dx)
    }

    fn real_prefix<'a>(&self, padded: &'a [usize]) -> &'a [usize] {
        let pad = self.pad_index();
        let len = padded.iter().position(|&i| i == pad).unwrap_or(padded.len());
        &padded[..len]
    }

    /// Per-position class probabilities for the real (non-PAD) prefix of a
    /// padded input. Dropout is applied when `training_rng` is given.
    pub fn forward(&self, padded: &[usize], training_rng: Option<&mut Rng>) -> Vec<[f64; N_TAGS]> {
        let indices = self.real_prefix(padded);
        let dropout = training_rng.map(|r| self.sample_dropout(r));
        self.run(indices, None, dropout.as_ref()).probs
    }

    fn sample_dropout(&self, r: &mut Rng) -> Dropout {
        let cfg = &self.config;
        Dropout {
            spatial: inverted_mask(r, self.emb_dim, cfg.spatial_dropout),
            recurrent: [
                inverted_mask(r, cfg.lstm1_units, cfg.recurrent_dropout),
                inverted_mask(r, cfg.lstm1_units, cfg.recurrent_dropout),
                inverted_mask(r, cfg.lstm2_units, cfg.recurrent_dropout),
                inverted_mask(r, cfg.lstm2_units, cfg.recurrent_dropout),
            ],
        }
    }

    /// Mean token cross-entropy over `data` and its gradient with respect
    /// to [`Self::params`], without dropout.
    pub fn loss_and_gradient(&self, data: &[TagSequence]) -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        let mut count = 0usize;
        for s in data {
            s.validate()?;
            let (idx, tags) = self.encode_example(s);
            let r = self.run(&idx, Some(&tags), None);
            loss += r.loss;
            count += idx.len();
            grad.iter_mut().zip(r.grad.as_deref().unwrap_or(&[])).for_each(|(a, b)| *a += b);
        }
        let n = count.max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    /// Loss and gradient of one padded example; positions past `len` are
    /// ignored whatever they contain.
    pub fn padded_loss_and_gradient(&self, padded: &[usize], tags: &[u8], len: usize) -> (f64, Vec<f64>) {
        let len = len.min(padded.len()).min(tags.len());
        let r = self.run(&padded[..len], Some(&tags[..len]), None);
        (r.loss, r.grad.unwrap_or_default())
    }

    fn encode_example(&self, s: &TagSequence) -> (Vec<usize>, Vec<u8>) {
        let len = s.tokens.len().min(self.config.pad_len);
        let idx = s.tokens[..len].iter().map(|t| self.token_index(t)).collect();
        (idx, s.tags[..len].to_vec())
    }

    /// Per-token argmax tags; ties go to the lower class. Tokens beyond
    /// `pad_len` are tagged 0.
    pub fn tag<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TagSequence> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let probs = self.forward(&self.encode(tokens), None);
        let mut tags: Vec<u8> = probs.iter().map(|p| argmax(p) as u8).collect();
        tags.resize(tokens.len(), 0);
        Ok(TagSequence {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            tags,
        })
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
            emb_dim: self.emb_dim,
            vocab: self.vocab.clone(),
            tensors: self.tensors.clone(),
        };
        let mut payload = self.embeddings.clone();
        payload.extend_from_slice(&self.params);
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
        if layout(header.emb_dim, &header.config) != header.tensors {
            return Err(Error::BadModelFile("tensor layout does not match the configuration".into()));
        }
        let mut p = Payload::new(payload);
        let embeddings = p.take(header.vocab.len() * header.emb_dim)?;
        let n_params = header.tensors.last().map_or(0, |t| t.offset + t.len());
        let params = p.take(n_params)?;
        p.finish()?;
        Ok(TaggerModel {
            index: header.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            config: header.config,
            emb_dim: header.emb_dim,
            vocab: header.vocab,
            embeddings,
            tensors: header.tensors,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    rng: String,
    config: TaggerConfig,
    emb_dim: usize,
    vocab: Vec<String>,
    tensors: Vec<TensorInfo>,
}

fn concat(a: &[f64], b: &[f64], len: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * 2 * h);
    for t in 0..len {
        out.extend_from_slice(&a[t * h..(t + 1) * h]);
        out.extend_from_slice(&b[t * h..(t + 1) * h]);
    }
    out
}

fn split(x: &[f64], len: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(len * h);
    let mut b = Vec::with_capacity(len * h);
    for t in 0..len {
        a.extend_from_slice(&x[t * 2 * h..t * 2 * h + h]);
        b.extend_from_slice(&x[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    (a, b)
}

/// `rows × cols` matrix with orthonormal columns (or rows, if wider than
/// tall), from Gram-Schmidt on Gaussian draws.
fn orthogonal(r: &mut Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (n, m) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // m vectors of length n
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(m);
    while vs.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| gaussian(r)).collect();
        for u in &vs {
            let proj = crate::linalg::dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = crate::linalg::dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, v) in vs.iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            if rows >= cols {
                out[i * cols + j] = x;
            } else {
                out[j * cols + i] = x;
            }
        }
    }
    out
}

fn gaussian(r: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn train_tagger(data: &[TagSequence], vectors: &WordVectorTable, cfg: &TaggerConfig) -> Result<TaggerModel> {
    train_tagger_logged(data, vectors, cfg).map(|(m, _)| m)
}

/// Trains with RMSprop on masked token cross-entropy and returns the
/// per-epoch log.
pub fn train_tagger_logged(
    data: &[TagSequence],
    vectors: &WordVectorTable,
    cfg: &TaggerConfig,
) -> Result<(TaggerModel, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for s in data {
        s.validate()?;
    }
    let mut model = TaggerModel::new(vectors, cfg)?;
    let (train_idx, val_idx) = if cfg.validation_fraction > 0.0 && data.len() >= 2 {
        evalkit::holdout_split(data.len(), 1.0 - cfg.validation_fraction, cfg.seed)?
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let train: Vec<(Vec<usize>, Vec<u8>)> = train_idx
        .iter()
        .map(|&i| model.encode_example(&data[i]))
        .filter(|(idx, _)| !idx.is_empty())
        .collect();
    let val: Vec<(Vec<usize>, Vec<u8>)> = val_idx
        .iter()
        .map(|&i| model.encode_example(&data[i]))
        .filter(|(idx, _)| !idx.is_empty())
        .collect();
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut ms = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::derived(cfg.seed, 0x5EED_0001);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut tokens) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<SentenceResult> = batch
                .par_iter()
                .map(|&i| {
                    let stream = ((epoch as u64 + 1) << 32) | i as u64;
                    let dropout = model.sample_dropout(&mut rng::derived(cfg.seed, stream));
                    let (idx, tags) = &train[i];
                    model.run(idx, Some(tags), Some(&dropout))
                })
                .collect();
            let n_tokens: usize = batch.iter().map(|&i| train[i].0.len()).sum();
            let mut grad = vec![0.0; model.params.len()];
            for r in &results {
                loss_sum += r.loss;
                correct += r.correct;
                if let Some(g) = &r.grad {
                    grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            tokens += n_tokens;
            let scale = 1.0 / n_tokens as f64;
            for ((p, m), g) in model.params.iter_mut().zip(ms.iter_mut()).zip(&grad) {
                let g = g * scale;
                *m = cfg.rho * *m + (1.0 - cfg.rho) * g * g;
                *p -= cfg.optimizer_lr * g / (m.sqrt() + cfg.epsilon);
            }
        }
        let val_acc = (!val.is_empty()).then(|| {
            let (mut ok, mut n) = (0usize, 0usize);
            let per: Vec<(usize, usize)> = val
                .par_iter()
                .map(|(idx, tags)| {
                    let probs = model.run(idx, None, None).probs;
                    let ok = probs.iter().zip(tags).filter(|(p, &t)| argmax(*p) == usize::from(t)).count();
                    (ok, tags.len())
                })
                .collect();
            for (a, b) in per {
                ok += a;
                n += b;
            }
            ok as f64 / n as f64
        });
        let entry = EpochLog {
            epoch: epoch + 1,
            train_acc: correct as f64 / tokens as f64,
            val_acc,
            train_loss: loss_sum / tokens as f64,
        };
        log::debug!(
            "tagger epoch {}: loss {:.4} train_acc {:.4} val_acc {:?}",
            entry.epoch,
            entry.train_loss,
            entry.train_acc,
            entry.val_acc
        );
        log.push(entry);
    }
    Ok((model, log))
}

/// Space-joins the tokens tagged 1 and 2, each in sentence order.
pub fn decode_spans(ts: &TagSequence) -> RelationSpans {
    let join = |class: u8| {
        ts.tokens
            .iter()
            .zip(&ts.tags)
            .filter(|(_, &t)| t == class)
            .map(|(tok, _)| tok.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    RelationSpans {
        variable_1: join(1),
        variable_2: join(2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    /// Classes 0, 1, 2.
    pub per_class: Vec<ClassMetrics>,
    /// Micro average over the node classes 1 and 2.
    pub overall: NodeMetrics,
    pub accuracy: f64,
    pub tokens: usize,
}

/// Token-level metrics over aligned predicted and gold sequences.
pub fn per_class_metrics(preds: &[TagSequence], golds: &[TagSequence]) -> Result<TagMetrics> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: golds.len() });
    }
    let mut p_all = Vec::new();
    let mut g_all = Vec::new();
    for (p, g) in preds.iter().zip(golds) {
        if p.tags.len() != g.tags.len() {
            return Err(Error::LengthMismatch { left: p.tags.len(), right: g.tags.len() });
        }
        p_all.extend_from_slice(&p.tags);
        g_all.extend_from_slice(&g.tags);
    }
    let class = |c: usize, conf: Confusion| ClassMetrics {
        class: c,
        precision: conf.precision(),
        recall: conf.recall(),
        f1: conf.f1(),
        support: conf.tp + conf.fn_,
    };
    let mut per_class = Vec::with_capacity(N_TAGS);
    let mut node = Confusion::default();
    for c in 0..N_TAGS {
        let conf = evalkit::confusion_counts(&p_all, &g_all, &(c as u8))?;
        if c > 0 {
            node = node + conf;
        }
        per_class.push(class(c, conf));
    }
    let correct = p_all.iter().zip(&g_all).filter(|(a, b)| a == b).count();
    Ok(TagMetrics {
        per_class,
        overall: NodeMetrics {
            precision: node.precision(),
            recall: node.recall(),
            f1: node.f1(),
            support: node.tp + node.fn_,
        },
        accuracy: if p_all.is_empty() { 0.0 } else { correct as f64 / p_all.len() as f64 },
        tokens: p_all.len(),
    })
}

#[cfg(test)]
mod tests;
