//! Evaluation metrics beyond the training losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{loss, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    LogLoss,
    ErrorRate,
    Auc,
}

/// Computes a metric over predictions and targets.
///
/// `ErrorRate` thresholds predictions at 0.5; `Auc` uses the rank statistic
/// with mid-ranks for ties and requires both classes to be present.
pub fn metric(kind: Metric, pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.len() != y.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "metric over {} predictions vs {} targets",
            pred.len(),
            y.len()
        )));
    }
    match kind {
        Metric::Mse => loss(LossKind::Mse, pred, y),
        Metric::LogLoss => loss(LossKind::Bce, pred, y),
        Metric::ErrorRate => {
            let wrong = pred
                .iter()
                .zip(y)
                .filter(|(&p, &t)| ((p > 0.5) as u8 as f64) != t)
                .count();
            Ok(wrong as f64 / pred.len() as f64)
        }
        Metric::Auc => auc(pred, y),
    }
}

fn auc(pred: &[f64], y: &[f64]) -> Result<f64> {
    let n_pos = y.iter().filter(|&&t| t == 1.0).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    idx.sort_by(|&a, &b| pred[a].partial_cmp(&pred[b]).unwrap());

    // mid-ranks for tied predictions
    let mut ranks = vec![0.0; pred.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pred[idx[j + 1]] == pred[idx[i]] {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[idx[k]] = mid;
        }
        i = j + 1;
    }

    let pos_rank_sum: f64 = y
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == 1.0)
        .map(|(i, _)| ranks[i])
        .sum();
    let auc = (pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Ok(auc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_has_auc_one() {
        let pred = [0.1, 0.2, 0.8, 0.9];
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(metric(Metric::Auc, &pred, &y).unwrap(), 1.0);
    }

    #[test]
    fn auc_example_positive_outranks_both_negatives() {
        // 2 positive-negative pairs, both ordered correctly
        let pred = [0.2, 0.8, 0.6];
        let y = [0.0, 1.0, 0.0];
        assert_eq!(metric(Metric::Auc, &pred, &y).unwrap(), 1.0);
    }

    #[test]
    fn auc_handles_ties_with_midranks() {
        let pred = [0.5, 0.5];
        let y = [0.0, 1.0];
        assert_eq!(metric(Metric::Auc, &pred, &y).unwrap(), 0.5);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(matches!(
            metric(Metric::Auc, &[0.1, 0.9], &[1.0, 1.0]),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn auc_is_invariant_under_monotone_transform() {
        let pred = [0.05, 0.3, 0.6, 0.2, 0.9];
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let base = metric(Metric::Auc, &pred, &y).unwrap();
        let squashed: Vec<f64> = pred.iter().map(|p| (5.0 * p).tanh()).collect();
        assert!((metric(Metric::Auc, &squashed, &y).unwrap() - base).abs() < 1e-12);
        let shifted: Vec<f64> = pred.iter().map(|p| p * 100.0 + 3.0).collect();
        assert!((metric(Metric::Auc, &shifted, &y).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn error_rate_zero_when_exact() {
        let pred = [0.0, 1.0, 1.0];
        let y = [0.0, 1.0, 1.0];
        assert_eq!(metric(Metric::ErrorRate, &pred, &y).unwrap(), 0.0);
        let pred = [0.6, 0.4];
        let y = [0.0, 1.0];
        assert_eq!(metric(Metric::ErrorRate, &pred, &y).unwrap(), 1.0);
    }
}
