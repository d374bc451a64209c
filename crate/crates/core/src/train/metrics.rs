use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};
use crate::sea::{argmax, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mae,
    RocAuc,
    Accuracy,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::GraphRegression => MetricKind::Mae,
            Task::GraphBinary => MetricKind::RocAuc,
            Task::NodeClassification => MetricKind::Accuracy,
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mae)
    }

    /// Whether `candidate` beats `best` by at least `min_delta`.
    pub fn improves(self, candidate: f64, best: f64, min_delta: f64) -> bool {
        if self.higher_is_better() {
            candidate >= best + min_delta
        } else {
            candidate <= best - min_delta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub epoch: usize,
    pub loss: f64,
    pub metric: MetricKind,
    pub value: f64,
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(SeaError::ShapeMismatch {
            op: "mae",
            left: vec![predictions.len()],
            right: vec![targets.len()],
        });
    }
    if predictions.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    let total: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / predictions.len() as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(SeaError::ShapeMismatch {
            op: "accuracy",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(&row.to_vec()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s_pos > s_neg) + P(s_pos = s_neg) / 2`, with tied scores given their
/// average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SeaError::ShapeMismatch {
            op: "roc_auc",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SeaError::NonFinite { op: "roc_auc" });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(SeaError::SingleClass(u8::from(pos > 0)));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(SeaError::SingleClass(1))));
        assert!(matches!(roc_auc(&[0.1], &[false]), Err(SeaError::SingleClass(0))));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            pairs in proptest::collection::vec((0u8..12, any::<bool>()), 2..=100)
        ) {
            // coarse scores force many ties
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 4.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
        }
    }

    #[test]
    fn mae_and_accuracy() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
        let logits = arr2(&[[2.0, 1.0], [0.0, 3.0], [1.0, 1.0]]);
        assert_eq!(accuracy(&logits, &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1, 1, 1]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn improvement_direction() {
        assert!(MetricKind::Mae.improves(0.5, 0.6, 1e-6));
        assert!(!MetricKind::Mae.improves(0.6, 0.6, 1e-6));
        assert!(MetricKind::Accuracy.improves(0.7, 0.6, 1e-6));
        assert!(!MetricKind::RocAuc.improves(0.6 + 1e-7, 0.6, 1e-6));
    }
}
