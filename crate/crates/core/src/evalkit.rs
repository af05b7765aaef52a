//! Metrics and cross-validation plans shared by every trainable model.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RNG_ALGORITHM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest confusion counts of `positive` over aligned predictions and gold labels.
pub fn confusion_counts<T: PartialEq>(preds: &[T], golds: &[T], positive: &T) -> Result<Confusion> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    let mut c = Confusion::default();
    for (p, g) in preds.iter().zip(golds) {
        match (p == positive, g == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Harmonic mean of precision and recall, defined as 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let denom = precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<ClassMetrics>>,
}

/// Binary metrics with `positive` as the reported class.
pub fn binary_metrics(preds: &[usize], golds: &[usize], positive: usize) -> Result<Metrics> {
    let c = confusion_counts(preds, golds, &positive)?;
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(Metrics {
        accuracy: ratio(correct, preds.len()),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        support: c.tp + c.fn_,
        per_class: None,
    })
}

/// Averaging applied to per-class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Average {
    /// Unweighted mean of per-class precision, recall and F-1.
    Macro,
    /// Support-weighted mean of per-class scores.
    Weighted,
    /// Scores from pooled confusion counts over the selected classes.
    Micro,
}

/// Multiclass metrics over `n_classes`; `classes` selects which classes enter
/// the aggregate (all of them when `None`). Accuracy always covers every item.
pub fn multiclass_metrics(
    preds: &[usize],
    golds: &[usize],
    n_classes: usize,
    average: Average,
    classes: Option<&[usize]>,
) -> Result<Metrics> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    let all: Vec<usize> = (0..n_classes).collect();
    let selected = classes.unwrap_or(&all);
    let confusions: Vec<Confusion> = (0..n_classes)
        .map(|c| confusion_counts(preds, golds, &c))
        .collect::<Result<_>>()?;
    let per_class: Vec<ClassMetrics> = confusions
        .iter()
        .enumerate()
        .map(|(class, c)| ClassMetrics {
            class,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            support: c.tp + c.fn_,
        })
        .collect();
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let support: usize = selected.iter().map(|&c| per_class[c].support).sum();

    let (precision, recall, f1) = match average {
        Average::Macro => {
            let k = selected.len().max(1) as f64;
            let p = selected.iter().map(|&c| per_class[c].precision).sum::<f64>() / k;
            let r = selected.iter().map(|&c| per_class[c].recall).sum::<f64>() / k;
            let f = selected.iter().map(|&c| per_class[c].f1).sum::<f64>() / k;
            (p, r, f)
        }
        Average::Weighted => {
            let w = |c: usize| per_class[c].support as f64 / support.max(1) as f64;
            let p = selected.iter().map(|&c| w(c) * per_class[c].precision).sum();
            let r = selected.iter().map(|&c| w(c) * per_class[c].recall).sum();
            let f = selected.iter().map(|&c| w(c) * per_class[c].f1).sum();
            (p, r, f)
        }
        Average::Micro => {
            let pooled = selected
                .iter()
                .fold(Confusion::default(), |acc, &c| acc + confusions[c]);
            (pooled.precision(), pooled.recall(), pooled.f1())
        }
    };

    Ok(Metrics {
        accuracy: ratio(correct, preds.len()),
        precision,
        recall,
        f1,
        support,
        per_class: Some(per_class),
    })
}

/// Equal-weight mean of a set of fold metrics.
pub fn mean_metrics(folds: &[Metrics]) -> Metrics {
    let k = folds.len().max(1) as f64;
    let mean = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / k;
    Metrics {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        support: folds.iter().map(|m| m.support).sum(),
        per_class: None,
    }
}

/// Assignment of item indices to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub stratified: bool,
    pub seed: u64,
    pub rng: String,
}

impl FoldPlan {
    /// Item indices of each fold, in ascending order.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (item, &fold) in self.assignments.iter().enumerate() {
            out[fold].push(item);
        }
        out
    }

    /// (train, test) indices when `fold` is held out.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (item, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(item);
            } else {
                train.push(item);
            }
        }
        (train, test)
    }
}

fn check_folds(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewItems { n, k });
    }
    Ok(())
}

/// Seeded shuffle followed by round-robin fold assignment.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    check_folds(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut assignments = vec![0; n];
    for (pos, &item) in order.iter().enumerate() {
        assignments[item] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified: false,
        seed,
        rng: RNG_ALGORITHM.to_string(),
    })
}

/// Stratified variant: each class is shuffled and dealt round-robin, with the
/// dealing position carried across classes so total fold sizes stay within one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    check_folds(labels.len(), k)?;
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = rng::seeded(seed);
    let mut assignments = vec![0; labels.len()];
    let mut cursor = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for item in members {
            assignments[item] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified: true,
        seed,
        rng: RNG_ALGORITHM.to_string(),
    })
}

/// Seeded train/test split; the training share is rounded to the nearest item.
pub fn holdout_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::TooFewItems { n, k: 2 });
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// One row of a report table, mirroring the column layout used for model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "Model")]
    pub model: String,
    #[serde(rename = "Feature Normalization")]
    pub feature_normalization: String,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "F1-Score")]
    pub f1: f64,
}

impl ReportRow {
    pub fn new(model: impl Into<String>, normalization: impl Into<String>, m: &Metrics) -> Self {
        ReportRow {
            model: model.into(),
            feature_normalization: normalization.into(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub fn report_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn perfect_predictions_have_no_errors() {
        let ys = [1, 0, 1, 1, 0];
        let c = confusion_counts(&ys, &ys, &1).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(binary_metrics(&ys, &ys, 1).unwrap().f1, 1.0);
    }

    #[test]
    fn all_positive_against_all_negative() {
        let c = confusion_counts(&[1, 1, 1, 1], &[0, 0, 0, 0], &1).unwrap();
        assert_eq!(c, Confusion { tp: 0, fp: 4, fn_: 0, tn: 0 });
        assert_eq!(c.precision(), 0.0);
        assert_eq!(c.f1(), 0.0);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(matches!(
            confusion_counts(&[1, 0], &[1], &1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn f1_reference_rows() {
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert!((f1_score(0.935, 0.914) - 0.924).abs() < 5e-4);
        // 2 * 0.924 * 0.919 / 1.843, by hand
        assert!((f1_score(0.924, 0.919) - 0.921_493_217_580_037).abs() < 1e-12);
    }

    #[test]
    fn confusion_matches_pairwise_count_on_random_fixture() {
        let mut r = rng::seeded(11);
        let preds: Vec<usize> = (0..1000).map(|_| r.random_range(0..2)).collect();
        let golds: Vec<usize> = (0..1000).map(|_| r.random_range(0..2)).collect();
        let c = confusion_counts(&preds, &golds, &1).unwrap();
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        let mut tn = 0;
        for i in 0..1000 {
            if preds[i] == 1 && golds[i] == 1 {
                tp += 1;
            } else if preds[i] == 1 {
                fp += 1;
            } else if golds[i] == 1 {
                fn_ += 1;
            } else {
                tn += 1;
            }
        }
        assert_eq!(c, Confusion { tp, fp, fn_, tn });
    }

    #[test]
    fn singleton_folds() {
        let plan = kfold(10, 10, 3).unwrap();
        assert!(plan.folds().iter().all(|f| f.len() == 1));
    }

    #[test]
    fn ten_folds_of_130() {
        let plan = kfold(1300, 10, 3).unwrap();
        assert!(plan.folds().iter().all(|f| f.len() == 130));
    }

    #[test]
    fn stratified_700_600() {
        let labels: Vec<usize> = (0..1300).map(|i| usize::from(i >= 700)).collect();
        let plan = stratified_kfold(&labels, 10, 5).unwrap();
        for fold in plan.folds() {
            let a = fold.iter().filter(|&&i| labels[i] == 0).count();
            let b = fold.len() - a;
            assert!((69..=71).contains(&a), "{a}");
            assert!((59..=61).contains(&b), "{b}");
        }
    }

    #[test]
    fn fold_errors() {
        assert!(matches!(kfold(3, 5, 0), Err(Error::TooFewItems { .. })));
        assert!(kfold(3, 1, 0).is_err());
    }

    #[test]
    fn holdout_examples() {
        let (tr, te) = holdout_split(4, 0.75, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 1));
        assert_eq!(holdout_split(4, 0.75, 9).unwrap(), (tr, te));
        let (tr, te) = holdout_split(1300, 0.75, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (975, 325));
        assert!(holdout_split(1, 0.5, 0).is_err());
        assert!(holdout_split(10, 1.0, 0).is_err());
    }

    #[test]
    fn macro_and_micro_on_known_counts() {
        let golds = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 1, 2, 0];
        let m = multiclass_metrics(&preds, &golds, 3, Average::Macro, None).unwrap();
        // class 0: p 1/2 r 1/2; class 1: p 2/3 r 1; class 2: p 1 r 1/2
        let f0 = 0.5;
        let f1 = f1_score(2.0 / 3.0, 1.0);
        let f2 = f1_score(1.0, 0.5);
        assert!((m.f1 - (f0 + f1 + f2) / 3.0).abs() < 1e-12);
        let micro = multiclass_metrics(&preds, &golds, 3, Average::Micro, Some(&[1, 2])).unwrap();
        // pooled over 1,2: tp 3, fp 1, fn 1
        assert!((micro.precision - 0.75).abs() < 1e-12);
        assert!((micro.recall - 0.75).abs() < 1e-12);
        assert_eq!(micro.support, 4);
    }

    #[test]
    fn report_has_table_columns() {
        let m = Metrics {
            accuracy: 0.9,
            precision: 0.8,
            recall: 0.7,
            f1: 0.75,
            support: 3,
            per_class: None,
        };
        let mut buf = Vec::new();
        write_report_csv(&[ReportRow::new("Logistic Regression", "Stemming", &m)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("Model,Feature Normalization,Accuracy,Precision,Recall,F1-Score\n"));
    }

    proptest! {
        #[test]
        fn folds_partition_items(n in 2usize..300, k in 2usize..12, seed: u64) {
            prop_assume!(n >= k);
            let plan = kfold(n, k, seed).unwrap();
            let mut seen = vec![false; n];
            let folds = plan.folds();
            for fold in &folds {
                for &i in fold {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(plan, kfold(n, k, seed).unwrap());
        }

        #[test]
        fn stratified_counts_are_proportional(
            labels in prop::collection::vec(0usize..3, 20..200),
            k in 2usize..8,
            seed: u64,
        ) {
            let plan = stratified_kfold(&labels, k, seed).unwrap();
            for class in 0..3 {
                let total = labels.iter().filter(|&&l| l == class).count();
                for fold in plan.folds() {
                    let c = fold.iter().filter(|&&i| labels[i] == class).count();
                    let expected = total as f64 / k as f64;
                    prop_assert!((c as f64 - expected).abs() < 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn f1_symmetric_and_below_mean(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            prop_assert_eq!(f1_score(p, r), f1_score(r, p));
            prop_assert!(f1_score(p, r) <= (p + r) / 2.0 + 1e-15);
        }
    }
}
