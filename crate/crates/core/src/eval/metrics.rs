//! Downstream metrics.

use thiserror::Error;

use crate::data::{ColumnStats, Task};

#[derive(Debug, Error, PartialEq)]
#[error("predictions have length {predictions}, truth has length {truth}")]
pub struct LengthMismatch {
    pub predictions: usize,
    pub truth: usize,
}

/// Macro-F1 over the union of labels seen in truth and predictions.
pub fn macro_f1(pred: &[f64], truth: &[f64]) -> f64 {
    let n_classes = pred
        .iter()
        .chain(truth)
        .map(|&c| c as usize)
        .max()
        .map_or(0, |m| m + 1);
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p as usize, t as usize);
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            continue;
        }
        present += 1;
        sum += 2.0 * tp[c] as f64 / denom as f64;
    }
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

pub fn accuracy(pred: &[f64], truth: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// `1 − MSE` after mapping both sides through `(v − mean) / std`, and R².
///
/// `scale = None` standardizes with the truth's own statistics, in which case
/// the two values coincide.
pub fn regression_scores(pred: &[f64], truth: &[f64], scale: Option<(f64, f64)>) -> (f64, f64) {
    let stats = ColumnStats::of(truth);
    let (mean, std) = scale.unwrap_or((stats.mean, stats.std));
    let std = if std > 0.0 { std } else { 1.0 };
    let n = truth.len().max(1) as f64;
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = (p - mean) / std - (t - mean) / std;
            d * d
        })
        .sum::<f64>()
        / n;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let ss_tot: f64 = truth
        .iter()
        .map(|t| (t - stats.mean) * (t - stats.mean))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    (1.0 - mse, r2)
}

/// (primary, secondary): (macro-F1, accuracy) or (1 − MSE, R²).
pub fn metrics(pred: &[f64], truth: &[f64], task: Task) -> Result<(f64, f64), LengthMismatch> {
    if pred.len() != truth.len() {
        return Err(LengthMismatch {
            predictions: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(match task {
        Task::Classification => (macro_f1(pred, truth), accuracy(pred, truth)),
        Task::Regression => regression_scores(pred, truth, None),
    })
}
