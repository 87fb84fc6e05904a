//! ROC-AUC through the Mann-Whitney rank statistic.
//!
//! `AUC = (R_pos - n_pos (n_pos + 1) / 2) / (n_pos n_neg)` where `R_pos` is
//! the sum of the (tie-averaged) ranks of the positive cases. This equals the
//! probability that a random positive outscores a random negative, with ties
//! counted as one half.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// AUC for a single label, `None` unless both classes are present.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let positives_in_run = order[i..j].iter().filter(|&&k| positive[k]).count();
        rank_sum_pos += avg_rank * positives_in_run as f64;
        i = j;
    }

    let n_pos_f = n_pos as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Some(u / (n_pos_f * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// One entry per label; `None` when the label lacks positives or negatives.
    pub per_label: Vec<Option<f64>>,
    /// Mean over the defined per-label values.
    pub macro_average: Option<f64>,
}

pub fn roc_auc(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<AucReport> {
    roc_auc_with(Execution::default(), scores, labels)
}

/// `scores[case][label]` against binary `labels[case][label]`.
pub fn roc_auc_with(exec: Execution, scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<AucReport> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let width = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != width) || labels.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("ragged score or label rows"));
    }
    let per_label = par::map_range(exec, width, |j| {
        let col: Vec<f64> = scores.iter().map(|r| r[j]).collect();
        let pos: Vec<bool> = labels.iter().map(|r| r[j] == 1).collect();
        binary_auc(&col, &pos)
    });
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    let macro_average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AucReport {
        per_label,
        macro_average,
    })
}
