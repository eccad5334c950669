//! Binary detection metrics: average precision (AUC-PR), thresholded
//! accuracy, and PR curves. Positive class = hallucination.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::invalid("metrics", "scores and labels must align"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("metrics", "scores must be finite"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Average precision: the step-interpolated area under the PR curve,
/// processing equal-score groups atomically. Needs at least one example of
/// each class.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "auc_pr",
            "need at least one positive and one negative label",
        ));
    }
    let order = descending_order(scores);
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        let mut group_tp = 0usize;
        let mut group_fp = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                group_tp += 1;
            } else {
                group_fp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        fp += group_fp;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (group_tp as f64 / pos as f64) * precision;
        i = j;
    }
    Ok(ap)
}

/// Fraction of correct decisions at `threshold` (predict positive iff
/// score >= threshold).
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|&(&s, &l)| (s >= threshold) == l)
        .count();
    correct as f64 / scores.len() as f64
}

pub fn prevalence(labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRCurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// PR curve over descending thresholds, one point per distinct score plus
/// the threshold -inf endpoint (recall 1, precision = prevalence).
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PRCurvePoint>> {
    let (pos, neg) = check_scores(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "pr_curve",
            "need at least one positive and one negative label",
        ));
    }
    let order = descending_order(scores);
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(PRCurvePoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        });
        i = j;
    }
    points.push(PRCurvePoint {
        threshold: f64::NEG_INFINITY,
        precision: pos as f64 / (pos + neg) as f64,
        recall: 1.0,
    });
    Ok(points)
}

/// Mean and standard deviation of AUC-PR under label shuffling; the
/// permutation null is centered on prevalence.
pub fn aucpr_shuffle_null(
    scores: &[f64],
    labels: &[bool],
    n_shuffles: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_shuffles);
    let mut shuffled: Vec<bool> = labels.to_vec();
    for _ in 0..n_shuffles {
        shuffled.shuffle(&mut rng);
        values.push(auc_pr(scores, &shuffled)?);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / values.len().max(1) as f64;
    Ok((mean, var.sqrt()))
}
