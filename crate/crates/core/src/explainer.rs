//! Word-removal local explanations of detector predictions.
//!
//! Perturbed copies of a sentence are scored by the detector, and a
//! kernel-weighted ridge regression over token-presence bits serves as the
//! local linear stand-in.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::rng;

pub const RIDGE_PENALTY: f64 = 1e-3;
pub const KERNEL_WIDTH_FACTOR: f64 = 0.25;
pub const DROP_PROBABILITY: f64 = 0.3;
const REFINEMENT_STEPS: usize = 50;

/// Anything that assigns a hypothesis probability to a token list.
pub trait HypothesisScorer {
    fn hypothesis_prob(&self, tokens: &[String]) -> f64;
}

impl HypothesisScorer for DetectorModel {
    fn hypothesis_prob(&self, tokens: &[String]) -> f64 {
        DetectorModel::hypothesis_prob(self, tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mask: Vec<bool>,
    pub tokens_kept: Vec<String>,
    pub model_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// One entry per token position, in sentence order.
    pub tokens: Vec<TokenWeight>,
    pub intercept: f64,
    pub fidelity: f64,
    /// Detector probability on the full sentence.
    pub prediction: f64,
    pub ridge_penalty: f64,
    pub kernel_width: f64,
}

impl Explanation {
    pub fn weights(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.weight).collect()
    }

    /// Tokens ordered by descending |weight|; ties keep sentence order.
    pub fn ranked(&self) -> Vec<TokenWeight> {
        let mut out = self.tokens.clone();
        out.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
        out
    }
}

fn kept(tokens: &[String], mask: &[bool]) -> Vec<String> {
    tokens.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t.clone()).collect()
}

/// Masks: the full sentence, every leave-one-out mask (for two or more
/// tokens), then `n_random` random masks keeping at least one token.
pub fn perturb<M: HypothesisScorer + ?Sized>(
    model: &M,
    tokens: &[String],
    n_random: usize,
    seed: u64,
) -> Result<Vec<Perturbation>> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    let mut masks = vec![vec![true; n]];
    if n > 1 {
        for i in 0..n {
            let mut m = vec![true; n];
            m[i] = false;
            masks.push(m);
        }
    }
    let mut r = rng::seeded(seed);
    for _ in 0..n_random {
        let mask = loop {
            let m: Vec<bool> = (0..n).map(|_| !r.random_bool(DROP_PROBABILITY)).collect();
            if m.iter().any(|&b| b) {
                break m;
            }
        };
        masks.push(mask);
    }
    Ok(masks
        .into_iter()
        .map(|mask| {
            let tokens_kept = kept(tokens, &mask);
            let model_prob = model.hypothesis_prob(&tokens_kept);
            Perturbation { mask, tokens_kept, model_prob }
        })
        .collect())
}

pub fn explain<M: HypothesisScorer + ?Sized>(
    model: &M,
    tokens: &[String],
    n_random: usize,
    seed: u64,
) -> Result<Explanation> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    let kernel_width = KERNEL_WIDTH_FACTOR * n as f64;
    let prediction = model.hypothesis_prob(tokens);
    if n < 2 {
        let intercept = model.hypothesis_prob(&[]);
        return Ok(Explanation {
            tokens: vec![TokenWeight { token: tokens[0].clone(), weight: prediction - intercept }],
            intercept,
            fidelity: 1.0,
            prediction,
            ridge_penalty: RIDGE_PENALTY,
            kernel_width,
        });
    }

    let perturbations = perturb(model, tokens, n_random, seed)?;
    let weights: Vec<f64> = perturbations
        .iter()
        .map(|p| {
            let removed = p.mask.iter().filter(|&&m| !m).count() as f64;
            // squared Hamming distance to the full mask
            (-(removed * removed) / (kernel_width * kernel_width)).exp()
        })
        .collect();
    let coef = fit_ridge(&perturbations, &weights, n);

    let predict = |mask: &[bool]| -> f64 {
        coef[n] + mask.iter().zip(&coef).filter(|(&m, _)| m).map(|(_, c)| c).sum::<f64>()
    };
    let mean_abs: f64 = perturbations
        .iter()
        .map(|p| (predict(&p.mask) - p.model_prob).abs())
        .sum::<f64>()
        / perturbations.len() as f64;

    Ok(Explanation {
        tokens: tokens
            .iter()
            .zip(&coef)
            .map(|(t, &w)| TokenWeight { token: t.clone(), weight: w })
            .collect(),
        intercept: coef[n],
        fidelity: (1.0 - mean_abs).clamp(0.0, 1.0),
        prediction,
        ridge_penalty: RIDGE_PENALTY,
        kernel_width,
    })
}

/// Weighted ridge over presence bits with an unpenalized intercept
/// (last coefficient). The penalized system is refined by iterated
/// Tikhonov steps, so an exactly representable target is recovered exactly
/// while rank-deficient designs still have a unique solution.
fn fit_ridge(perturbations: &[Perturbation], weights: &[f64], n: usize) -> Vec<f64> {
    let d = n + 1;
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for (p, &w) in perturbations.iter().zip(weights) {
        let x: Vec<f64> = p.mask.iter().map(|&m| f64::from(u8::from(m))).chain([1.0]).collect();
        for i in 0..d {
            xty[i] += w * x[i] * p.model_prob;
            for j in 0..d {
                xtx[i * d + j] += w * x[i] * x[j];
            }
        }
    }
    let mut penalized = xtx.clone();
    for i in 0..n {
        penalized[i * d + i] += RIDGE_PENALTY;
    }
    let mut coef = vec![0.0; d];
    for _ in 0..REFINEMENT_STEPS {
        // (XᵀWX + λI) c' = XᵀWy + λ c
        let mut rhs = xty.clone();
        for i in 0..n {
            rhs[i] += RIDGE_PENALTY * coef[i];
        }
        match solve(penalized.clone(), rhs) {
            Some(next) => {
                let change = next.iter().zip(&coef).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                coef = next;
                if change < 1e-15 {
                    break;
                }
            }
            None => break,
        }
    }
    coef
}

/// Leave-one-out probability drops P(full) − P(without token i).
pub fn loo_deltas<M: HypothesisScorer + ?Sized>(model: &M, tokens: &[String]) -> Vec<f64> {
    let full = model.hypothesis_prob(tokens);
    (0..tokens.len())
        .map(|i| {
            let mut rest = tokens.to_vec();
            rest.remove(i);
            full - model.hypothesis_prob(&rest)
        })
        .collect()
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
