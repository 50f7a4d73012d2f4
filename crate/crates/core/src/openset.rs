//! Inference-time scoring, unknown detection and threshold calibration.
//!
//! The score of a sample is its largest hybrid distance to any reciprocal
//! point: high means "far from what some known class is not", i.e. known.
//! Samples with `score < τ` are reported as unknown.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Mode, ModelParams};
use crate::numgrad::{log_sum_exp, Tensor};
use crate::train::argmax;

pub const CALIBRATION_METHOD: &str = "max-f1-unknown";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub distances: Vec<f64>,
    pub score: f64,
    pub predicted_class: usize,
    /// `None` until [`detect`] runs.
    pub is_unknown: Option<bool>,
}

impl ScoredSample {
    pub fn from_distances(distances: Vec<f64>) -> Self {
        let predicted_class = argmax(&distances);
        ScoredSample {
            score: distances[predicted_class],
            distances,
            predicted_class,
            is_unknown: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl ScoreSummary {
    fn of(scores: &[f64]) -> Self {
        ScoreSummary {
            count: scores.len(),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub method: String,
    pub known: ScoreSummary,
    pub unknown: ScoreSummary,
    /// Unknown-as-positive F1 achieved on the calibration scores.
    pub f1: f64,
}

impl Threshold {
    /// An uncalibrated threshold at a fixed value.
    pub fn fixed(tau: f64) -> Self {
        let empty = ScoreSummary {
            count: 0,
            min: f64::NAN,
            mean: f64::NAN,
            max: f64::NAN,
        };
        Threshold {
            tau,
            method: "fixed".into(),
            known: empty,
            unknown: empty,
            f1: f64::NAN,
        }
    }
}

/// Distances, score and argmax class for every row of `x`.
pub fn score(x: &Tensor, params: &ModelParams) -> Result<Vec<ScoredSample>> {
    let d = model::distances(x, params)?;
    Ok((0..d.rows())
        .map(|i| ScoredSample::from_distances(d.row(i).to_vec()))
        .collect())
}

/// Flag `score < τ` as unknown; known samples keep their predicted class.
pub fn detect(mut scored: Vec<ScoredSample>, threshold: &Threshold) -> Vec<ScoredSample> {
    for s in &mut scored {
        s.is_unknown = Some(s.score < threshold.tau);
    }
    scored
}

/// F1 of "unknown" detection when `score < tau` is predicted unknown.
pub fn detection_f1(known: &[f64], unknown: &[f64], tau: f64) -> f64 {
    let tp = unknown.iter().filter(|&&s| s < tau).count();
    let fp = known.iter().filter(|&&s| s < tau).count();
    let fn_ = unknown.len() - tp;
    f1_from_counts(tp, fp, fn_)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Midpoint strictly above `lo` and at most `hi`.
fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo / 2.0 + hi / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Candidate thresholds: `-∞`, midpoints of adjacent distinct scores, `+∞`.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(sorted.windows(2).map(|w| split_point(w[0], w[1])));
    out.push(f64::INFINITY);
    out
}

/// Pick τ maximizing unknown-detection F1 on validation scores.
///
/// Ties go to the smallest τ.
pub fn calibrate(known: &[f64], unknown: &[f64]) -> Result<Threshold> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::contract(format!(
            "calibration needs known and unknown scores (got {} known, {} unknown)",
            known.len(),
            unknown.len()
        )));
    }
    if known.iter().chain(unknown).any(|s| !s.is_finite()) {
        return Err(Error::contract("calibration scores must be finite"));
    }
    // (score, is_unknown) ascending; sweeping τ upward moves whole tie groups
    // into the "unknown" side.
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, false))
        .chain(unknown.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let total_unknown = unknown.len();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best_tau = f64::NEG_INFINITY;
    let mut best_f1 = f1_from_counts(0, 0, total_unknown);
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tau = match all.get(i) {
            Some(&(next, _)) => split_point(value, next),
            None => f64::INFINITY,
        };
        let f1 = f1_from_counts(tp, fp, total_unknown - tp);
        if f1 > best_f1 {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    Ok(Threshold {
        tau: best_tau,
        method: CALIBRATION_METHOD.into(),
        known: ScoreSummary::of(known),
        unknown: ScoreSummary::of(unknown),
        f1: best_f1,
    })
}

/// Maximum softmax probability over the logits; higher means more known.
pub fn msp_from_logits(logits: &Tensor) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (max - log_sum_exp(row)).exp()
        })
        .collect()
}

/// Max-softmax-probability baseline scorer.
pub fn msp_score(x: &Tensor, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(msp_from_logits(&model::logits(x, params, Mode::Infer, None)?))
}
