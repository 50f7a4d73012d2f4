//! Closed-set macro metrics and open-set ranking metrics.
//!
//! Conventions:
//! - precision or recall with a zero denominator is 0, so an absent class
//!   that is never predicted contributes zeros to the macro mean;
//! - AUROC is the Mann-Whitney statistic, ties counted as one half;
//! - AUPR is the step-wise sum `Σ (R_i − R_{i−1}) · P_i` over tie-collapsed
//!   thresholds, taken in descending score order. No trapezoids.

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::numgrad::Tensor;
use crate::openset::{self, Threshold};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub per_class: Vec<ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[truth][prediction]`, rejected samples excluded.
    pub confusion: Vec<Vec<usize>>,
    /// Per true class, samples predicted as "not any known class".
    pub rejected: Vec<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro precision/recall/F1 over `k` classes.
pub fn macro_prf(predictions: &[usize], truths: &[usize], k: usize) -> Result<PrfReport> {
    let preds: Vec<Option<usize>> = predictions.iter().map(|&p| Some(p)).collect();
    macro_prf_with_reject(&preds, truths, k)
}

/// As [`macro_prf`], where `None` is a rejection: a miss for the true class
/// that is not a prediction of any class.
pub fn macro_prf_with_reject(
    predictions: &[Option<usize>],
    truths: &[usize],
    k: usize,
) -> Result<PrfReport> {
    if predictions.len() != truths.len() {
        return Err(Error::contract(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if let Some(bad) = truths
        .iter()
        .copied()
        .chain(predictions.iter().flatten().copied())
        .find(|&c| c >= k)
    {
        return Err(Error::contract(format!("class index {bad} out of range for {k} classes")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut rejected = vec![0usize; k];
    for (p, &t) in predictions.iter().zip(truths) {
        match p {
            Some(p) => confusion[t][*p] += 1,
            None => rejected[t] += 1,
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
            let support = confusion[c].iter().sum::<usize>() + rejected[c];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    Ok(PrfReport {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        per_class,
        confusion,
        rejected,
    })
}

fn oriented(scores: &[f64], higher_is_positive: bool) -> Result<Vec<f64>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("scores contain NaN"));
    }
    Ok(if higher_is_positive {
        scores.to_vec()
    } else {
        scores.iter().map(|s| -s).collect()
    })
}

/// `P(known > unknown) + ½ P(tie)` over all known/unknown pairs.
pub fn auroc(scores: &[f64], is_known: &[bool], higher_means_known: bool) -> Result<f64> {
    if scores.len() != is_known.len() {
        return Err(Error::contract("scores and flags differ in length"));
    }
    let s = oriented(scores, higher_means_known)?;
    let pos = is_known.iter().filter(|&&k| k).count();
    let neg = is_known.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract("AUROC needs both known and unknown samples"));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    // Twice the Mann-Whitney U, kept integral so ties stay exact.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let value = s[order[i]];
        let (mut p, mut n) = (0u128, 0u128);
        while i < order.len() && s[order[i]] == value {
            if is_known[order[i]] {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Area under the precision-recall curve with `is_positive` as the positive class.
pub fn aupr(scores: &[f64], is_positive: &[bool], higher_means_positive: bool) -> Result<f64> {
    if scores.len() != is_positive.len() {
        return Err(Error::contract("scores and flags differ in length"));
    }
    let s = oriented(scores, higher_means_positive)?;
    let pos = is_positive.iter().filter(|&&p| p).count();
    if pos == 0 {
        return Err(Error::contract("AUPR needs at least one positive sample"));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let value = s[order[i]];
        while i < order.len() && s[order[i]] == value {
            if is_positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// AUROC, AUPR-IN (known positive) and AUPR-OUT (unknown positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetMetrics {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

impl OpenSetMetrics {
    pub fn compute(
        known_scores: &[f64],
        unknown_scores: &[f64],
        higher_means_known: bool,
    ) -> Result<Self> {
        let scores: Vec<f64> = known_scores.iter().chain(unknown_scores).copied().collect();
        let is_known: Vec<bool> = std::iter::repeat(true)
            .take(known_scores.len())
            .chain(std::iter::repeat(false).take(unknown_scores.len()))
            .collect();
        let is_unknown: Vec<bool> = is_known.iter().map(|k| !k).collect();
        Ok(OpenSetMetrics {
            auroc: auroc(&scores, &is_known, higher_means_known)?,
            aupr_in: aupr(&scores, &is_known, higher_means_known)?,
            aupr_out: aupr(&scores, &is_unknown, !higher_means_known)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub rejected: usize,
}

/// Evaluation of a calibrated model on known and unknown test samples.
///
/// Serialized key names: `precision`, `recall`, `f1_score` (macro over known
/// classes), and under `[open_set]` `auroc`, `aupr_in`, `aupr_out` computed
/// from the max-distance score. `[msp_baseline]` holds the same three
/// ranking metrics for the max-softmax-probability score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1_score: f64,
    pub known_count: usize,
    pub unknown_count: usize,
    pub rejected_known: usize,
    pub flagged_unknown: usize,
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_set: Option<OpenSetMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msp_baseline: Option<OpenSetMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// The six headline columns on one line each.
    pub fn headline(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let os = self.open_set;
        format!(
            "Precision  {:.4}\nRecall     {:.4}\nF1-Score   {:.4}\nAUROC      {}\nAUPR-IN    {}\nAUPR-OUT   {}\n",
            self.precision,
            self.recall,
            self.f1_score,
            fmt(os.map(|m| m.auroc)),
            fmt(os.map(|m| m.aupr_in)),
            fmt(os.map(|m| m.aupr_out)),
        )
    }
}

/// Score known and unknown test samples and assemble the report.
///
/// Known samples flagged unknown count against their true class. Ranking
/// metrics are absent when `unknown_test` has no rows.
pub fn evaluate(
    params: &ModelParams,
    threshold: &Threshold,
    known_test: &Dataset,
    unknown_test: &Tensor,
) -> Result<EvalReport> {
    let k = params.num_classes();
    if known_test.label_names != params.labels {
        return Err(Error::contract("test label vocabulary differs from the model's"));
    }
    let known = openset::detect(openset::score(&known_test.features, params)?, threshold);
    let unknown = openset::detect(openset::score(unknown_test, params)?, threshold);
    let predictions: Vec<Option<usize>> = known
        .iter()
        .map(|s| (!s.is_unknown.unwrap()).then_some(s.predicted_class))
        .collect();
    let prf = macro_prf_with_reject(&predictions, &known_test.labels, k)?;

    let known_scores: Vec<f64> = known.iter().map(|s| s.score).collect();
    let unknown_scores: Vec<f64> = unknown.iter().map(|s| s.score).collect();
    let (open_set, msp_baseline) = if unknown_scores.is_empty() || known_scores.is_empty() {
        (None, None)
    } else {
        let msp_known = openset::msp_score(&known_test.features, params)?;
        let msp_unknown = openset::msp_score(unknown_test, params)?;
        (
            Some(OpenSetMetrics::compute(&known_scores, &unknown_scores, true)?),
            Some(OpenSetMetrics::compute(&msp_known, &msp_unknown, true)?),
        )
    };

    Ok(EvalReport {
        precision: prf.precision,
        recall: prf.recall,
        f1_score: prf.f1,
        known_count: known.len(),
        unknown_count: unknown.len(),
        rejected_known: prf.rejected.iter().sum(),
        flagged_unknown: unknown.iter().filter(|s| s.is_unknown == Some(true)).count(),
        tau: threshold.tau,
        open_set,
        msp_baseline,
        classes: params
            .labels
            .iter()
            .zip(&prf.per_class)
            .zip(&prf.rejected)
            .map(|((label, m), &rejected)| ClassReport {
                label: label.clone(),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support: m.support,
                rejected,
            })
            .collect(),
        confusion: prf.confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let r = macro_prf(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_hand_example() {
        let r = macro_prf(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-15);
        assert!((r.f1 - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_drags_macro_down() {
        let r = macro_prf(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(macro_prf(&[0], &[0, 1], 2).is_err());
        assert!(macro_prf(&[2], &[0], 2).is_err());
    }

    #[test]
    fn rejections_are_misses() {
        let r = macro_prf_with_reject(&[Some(0), None, Some(1)], &[0, 0, 1], 2).unwrap();
        assert_eq!(r.per_class[0].recall, 0.5);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.rejected, vec![1, 0]);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>() + r.rejected[c], r.per_class[c].support);
        }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[3.0, 2.0, 0.0, -1.0], &[true, true, false, false], true).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0; 4], &[true, false, true, false], true).unwrap(), 0.5);
        let a = auroc(&[3.0, 1.0, 2.0, 0.0], &[true, true, false, false], true).unwrap();
        assert_eq!(a, 0.75);
        let flipped = auroc(&[3.0, 1.0, 2.0, 0.0], &[true, true, false, false], false).unwrap();
        assert_eq!(flipped, 0.25);
    }

    #[test]
    fn auroc_needs_both_classes() {
        assert!(auroc(&[1.0, 2.0], &[true, true], true).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.9, 0.8, 0.1], &[true, true, false], true).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.1, 0.2], &[true, false, false], true).unwrap(), 1.0);
        assert!(aupr(&[0.1], &[false], true).is_err());
        // Positive ranked last of three: area = 1 · 1/3.
        let a = aupr(&[0.1, 0.5, 0.6], &[true, false, false], true).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aupr_random_scorer_tracks_prevalence() {
        use rand::Rng;
        let mut r = crate::rng::generator(2024);
        let n = 100_000;
        let p = 0.3;
        let flags: Vec<bool> = (0..n).map(|_| r.gen::<f64>() < p).collect();
        let scores: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let a = aupr(&scores, &flags, true).unwrap();
        assert!((a - p).abs() < 0.02, "{a}");
    }

    proptest! {
        #[test]
        fn auroc_complement_without_ties(
            scores in proptest::collection::btree_set(-1000i32..1000, 2..50),
            seed in 0u64..1000,
        ) {
            use rand::Rng;
            let mut r = crate::rng::generator(seed);
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let mut flags: Vec<bool> = scores.iter().map(|_| r.gen()).collect();
            flags[0] = true;
            flags[1] = false;
            let inverted: Vec<bool> = flags.iter().map(|f| !f).collect();
            let a = auroc(&scores, &flags, true).unwrap();
            let b = auroc(&scores, &inverted, true).unwrap();
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
        }

        #[test]
        fn ranking_metrics_survive_monotone_transforms(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..60),
            seed in 0u64..1000,
        ) {
            use rand::Rng;
            let mut r = crate::rng::generator(seed);
            let mut flags: Vec<bool> = scores.iter().map(|_| r.gen()).collect();
            flags[0] = true;
            flags[1] = false;
            let t: Vec<f64> = scores.iter().map(|v| 3.0 * v + 7.0).collect();
            prop_assert_eq!(auroc(&scores, &flags, true).unwrap(), auroc(&t, &flags, true).unwrap());
            prop_assert_eq!(aupr(&scores, &flags, true).unwrap(), aupr(&t, &flags, true).unwrap());
        }

        #[test]
        fn macro_prf_relabeling_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..80),
        ) {
            let perm = [2usize, 0, 3, 1];
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truths: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let pp: Vec<usize> = preds.iter().map(|&c| perm[c]).collect();
            let pt: Vec<usize> = truths.iter().map(|&c| perm[c]).collect();
            let a = macro_prf(&preds, &truths, 4).unwrap();
            let b = macro_prf(&pp, &pt, 4).unwrap();
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
        }
    }
}
