//! L2-regularized logistic regression over sparse feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, sigmoid, softmax_in_place};

pub type SparseVec = Vec<(usize, f64)>;

pub const MAX_ITERATIONS: usize = 2000;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const ARMIJO_C: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Causality,
    Direction,
}

/// Binary models keep one weight row scored through a sigmoid; multiclass
/// models keep one row per class and a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub task: Task,
    pub classes: Vec<String>,
    pub n_features: usize,
    /// `rows × n_features`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// λ in `Σ NLL + λ/2 ‖W‖²`; larger is stronger.
    pub reg_strength: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn zeroed(task: Task, classes: Vec<String>, n_features: usize, reg_strength: f64) -> Self {
        let rows = if classes.len() == 2 { 1 } else { classes.len() };
        LogisticModel {
            task,
            classes,
            n_features,
            weights: vec![0.0; rows * n_features],
            bias: vec![0.0; rows],
            reg_strength,
            iterations: 0,
            converged: false,
        }
    }

    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    fn is_binary(&self) -> bool {
        self.rows() == 1
    }

    fn scores(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let n = self.n_features;
        (0..self.rows())
            .map(|r| {
                self.bias[r]
                    + x.iter()
                        .filter(|(j, _)| *j < n)
                        .map(|&(j, v)| self.weights[r * n + j] * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Class probabilities in `classes` order.
    pub fn predict_proba(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let s = self.scores(x);
        if self.is_binary() {
            let p = sigmoid(s[0]);
            vec![1.0 - p, p]
        } else {
            let mut p = s;
            softmax_in_place(&mut p);
            p
        }
    }

    /// Binary: class 1 only when its probability exceeds 0.5. Multiclass:
    /// argmax, ties to the earlier class.
    pub fn predict(&self, x: &[(usize, f64)]) -> usize {
        let p = self.predict_proba(x);
        if self.is_binary() {
            usize::from(p[1] > 0.5)
        } else {
            argmax(&p)
        }
    }

    /// Flat parameters: weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.weights.clone();
        out.extend_from_slice(&self.bias);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
    }

    /// Penalized objective and its gradient with respect to [`Self::params`].
    pub fn objective_and_gradient(&self, xs: &[SparseVec], ys: &[usize]) -> (f64, Vec<f64>) {
        let n = self.n_features;
        let rows = self.rows();
        let mut grad = vec![0.0; rows * n + rows];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let s = self.scores(x);
            let deltas: Vec<f64> = if self.is_binary() {
                let t = y as f64;
                // log(1 + e^s) - t s, computed stably
                loss += s[0].max(0.0) + (-s[0].abs()).exp().ln_1p() - t * s[0];
                vec![sigmoid(s[0]) - t]
            } else {
                let mut p = s.clone();
                softmax_in_place(&mut p);
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += lse - s[y];
                p.iter().enumerate().map(|(c, &pc)| pc - f64::from(u8::from(c == y))).collect()
            };
            for (r, d) in deltas.iter().enumerate() {
                grad[rows * n + r] += d;
                for &(j, v) in x.iter().filter(|(j, _)| *j < n) {
                    grad[r * n + j] += d * v;
                }
            }
        }
        let lambda = self.reg_strength;
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g += lambda * w;
        }
        loss += 0.5 * lambda * self.weights.iter().map(|w| w * w).sum::<f64>();
        (loss, grad)
    }

    /// Unpenalized negative log-likelihood.
    pub fn nll(&self, xs: &[SparseVec], ys: &[usize]) -> f64 {
        let mut unreg = self.clone();
        unreg.reg_strength = 0.0;
        unreg.objective_and_gradient(xs, ys).0
    }
}

/// Fits by full-batch L-BFGS with Armijo backtracking. Stops when the
/// gradient max-norm drops below [`GRADIENT_TOLERANCE`], when the objective
/// stops decreasing in floating point, or after [`MAX_ITERATIONS`].
pub fn train_logreg(
    xs: &[SparseVec],
    ys: &[usize],
    task: Task,
    classes: &[&str],
    n_features: usize,
    reg_strength: f64,
) -> Result<LogisticModel> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if reg_strength.is_nan() || reg_strength < 0.0 {
        return Err(Error::InvalidConfig(format!("reg_strength must be ≥ 0, got {reg_strength}")));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y >= classes.len()) {
        return Err(Error::InvalidConfig(format!("label {bad} outside {} classes", classes.len())));
    }
    let distinct = {
        let mut seen = vec![false; classes.len()];
        ys.iter().for_each(|&y| seen[y] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::SingleClass);
    }

    let mut model = LogisticModel::zeroed(
        task,
        classes.iter().map(|c| c.to_string()).collect(),
        n_features,
        reg_strength,
    );
    let mut params = model.params();
    let (mut f, mut g) = model.objective_and_gradient(xs, ys);
    // L-BFGS two-loop recursion with backtracking on the Armijo condition
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for it in 0..MAX_ITERATIONS {
        model.iterations = it;
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax < GRADIENT_TOLERANCE {
            model.converged = true;
            model.set_params(&params);
            return Ok(model);
        }
        let mut dir = lbfgs_direction(&g, &history);
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() { 1.0 / gmax.max(1.0) } else { 1.0 };
        let accepted = loop {
            let candidate: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            model.set_params(&candidate);
            let (fc, gc) = model.objective_and_gradient(xs, ys);
            if fc <= f + ARMIJO_C * step * slope {
                break Some((candidate, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((candidate, fc, gc)) = accepted else {
            model.set_params(&params);
            model.converged = false;
            return Ok(model);
        };
        let s_k: Vec<f64> = candidate.iter().zip(&params).map(|(a, b)| a - b).collect();
        let y_k: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s_k, &y_k);
        if sy > 1e-12 {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s_k, y_k, 1.0 / sy));
        }
        // the objective is a sum over examples, so an absolute gradient
        // tolerance can sit below its rounding floor; stop once f stalls
        let stalled = f - fc <= 4.0 * f64::EPSILON * f.abs().max(1.0);
        params = candidate;
        f = fc;
        g = gc;
        if stalled {
            model.set_params(&params);
            model.iterations = it + 1;
            model.converged = true;
            return Ok(model);
        }
    }
    model.set_params(&params);
    model.iterations = MAX_ITERATIONS;
    let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    model.converged = gmax < GRADIENT_TOLERANCE;
    Ok(model)
}

const LBFGS_MEMORY: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs_direction(g: &[f64], history: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_problem(seed: u64, n: usize, d: usize, classes: usize) -> (Vec<SparseVec>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let xs: Vec<SparseVec> = (0..n)
            .map(|_| {
                let mut x = Vec::new();
                for j in 0..d {
                    if r.random_bool(0.6) {
                        x.push((j, r.random_range(-1.0..1.0)));
                    }
                }
                x
            })
            .collect();
        let ys = (0..n).map(|i| i % classes).collect();
        (xs, ys)
    }

    fn gradient_check(classes: usize, lambda: f64) {
        let (xs, ys) = random_problem(3, 12, 5, classes);
        let names: Vec<String> = (0..classes).map(|c| c.to_string()).collect();
        let mut m = LogisticModel::zeroed(Task::Direction, names, 5, lambda);
        let mut r = rng::seeded(8);
        let p: Vec<f64> = m.params().iter().map(|_| r.random_range(-1.0..1.0)).collect();
        m.set_params(&p);
        let (_, g) = m.objective_and_gradient(&xs, &ys);
        let eps = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += eps;
            m.set_params(&q);
            let up = m.objective_and_gradient(&xs, &ys).0;
            q[i] -= 2.0 * eps;
            m.set_params(&q);
            let down = m.objective_and_gradient(&xs, &ys).0;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-12);
            assert!(rel < 1e-6, "param {i}: {} vs {numeric}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(2, 0.0);
        gradient_check(3, 0.0);
        gradient_check(3, 0.7);
    }

    #[test]
    fn separable_set_is_fit() {
        let xs: Vec<SparseVec> = (0..20).map(|i| vec![(i % 2, 1.0), (2, 0.5)]).collect();
        let ys: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let m = train_logreg(&xs, &ys, Task::Causality, &["0", "1"], 3, 0.01).unwrap();
        assert!(xs.iter().zip(&ys).all(|(x, &y)| m.predict(x) == y));
        assert!(m.converged);
    }

    #[test]
    fn single_class_and_mismatch_are_errors() {
        let xs = vec![vec![(0, 1.0)]; 3];
        assert!(matches!(
            train_logreg(&xs, &[1, 1, 1], Task::Causality, &["0", "1"], 1, 1.0),
            Err(Error::SingleClass)
        ));
        assert!(matches!(
            train_logreg(&xs, &[1, 0], Task::Causality, &["0", "1"], 1, 1.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_model_ties() {
        let binary = LogisticModel::zeroed(Task::Causality, vec!["0".into(), "1".into()], 2, 1.0);
        assert_eq!(binary.predict(&[(0, 1.0)]), 0);
        let multi = LogisticModel::zeroed(Task::Direction, vec!["a".into(), "b".into(), "c".into()], 2, 1.0);
        assert_eq!(multi.predict(&[(0, 1.0)]), 0);
    }

    #[test]
    fn stronger_regularization_never_improves_fit() {
        let (xs, ys) = random_problem(11, 40, 6, 3);
        let names = ["a", "b", "c"];
        let mut last = f64::NEG_INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let m = train_logreg(&xs, &ys, Task::Direction, &names, 6, lambda).unwrap();
            let nll = m.nll(&xs, &ys);
            assert!(nll >= last - 1e-6, "λ {lambda}: {nll} < {last}");
            last = nll;
        }
    }

    #[test]
    fn scaling_inputs_keeps_training_predictions() {
        let (xs, ys) = random_problem(5, 30, 4, 3);
        let scaled: Vec<SparseVec> = xs.iter().map(|x| x.iter().map(|&(j, v)| (j, 3.0 * v)).collect()).collect();
        let names = ["a", "b", "c"];
        let a = train_logreg(&xs, &ys, Task::Direction, &names, 4, 0.0).unwrap();
        let b = train_logreg(&scaled, &ys, Task::Direction, &names, 4, 0.0).unwrap();
        // compare where the unscaled model is confident; near-ties may flip
        for ((x, xs3), _) in xs.iter().zip(&scaled).zip(&ys) {
            let p = a.predict_proba(x);
            let mut sorted = p.clone();
            sorted.sort_by(|u, v| v.total_cmp(u));
            if sorted[0] - sorted[1] > 0.05 {
                assert_eq!(a.predict(x), b.predict(xs3));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn probabilities_normalize(ws in prop::collection::vec(-5.0f64..5.0, 9), x in prop::collection::vec(-2.0f64..2.0, 3)) {
            let mut m = LogisticModel::zeroed(Task::Direction, vec!["a".into(), "b".into(), "c".into()], 2, 1.0);
            m.set_params(&ws);
            let xv: SparseVec = vec![(0, x[0]), (1, x[1])];
            let p = m.predict_proba(&xv);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut b = LogisticModel::zeroed(Task::Causality, vec!["0".into(), "1".into()], 2, 1.0);
            b.set_params(&ws[..3]);
            let q = b.predict_proba(&xv);
            prop_assert!((0.0..=1.0).contains(&q[1]));
        }
    }
}
