//! Rank-based AUC and the classification metrics reported for detection.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Area under the ROC curve from rank sums. Label 1 is positive; tied scores
/// share the mean of their ranks, so the result equals the Mann–Whitney
/// statistic with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(crate::error::dim_err("auc", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("auc of NaN scores"));
    }
    let m = labels.iter().filter(|&&l| l == 1).count();
    let n = labels.len() - m;
    if m == 0 || n == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks doubled so tied means stay integral and the sum is exact.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_mean = (i + 1 + j) as u64;
        rank_sum2 += twice_mean * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        i = j;
    }
    let (m, n) = (m as u64, n as u64);
    let numer2 = rank_sum2 - m * (m + 1);
    Ok(numer2 as f64 / (2 * m * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub acc: f64,
    pub uar: f64,
    pub wa_f1: f64,
    pub auc: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 2]; 2],
}

/// ACC, UAR and support-weighted F1 for binary predictions. `auc` is left NaN;
/// [`report`] fills it from scores.
pub fn classification_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricReport> {
    if predictions.len() != labels.len() {
        return Err(crate::error::dim_err("classification_metrics", &[labels.len()], &[predictions.len()]));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("classification_metrics"));
    }
    let mut confusion = [[0u64; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::UndefinedMetric("labels must be 0 or 1"));
        }
        confusion[l as usize][p as usize] += 1;
    }
    let total = labels.len() as f64;
    let support = [confusion[0][0] + confusion[0][1], confusion[1][0] + confusion[1][1]];
    if support.contains(&0) {
        return Err(Error::UndefinedMetric("uar needs both classes in the labels"));
    }
    let acc = (confusion[0][0] + confusion[1][1]) as f64 / total;
    let mut recalls = [0.0; 2];
    let mut wa_f1 = 0.0;
    for c in 0..2 {
        let tp = confusion[c][c] as f64;
        let predicted = (confusion[0][c] + confusion[1][c]) as f64;
        let recall = tp / support[c] as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        recalls[c] = recall;
        wa_f1 += f1 * support[c] as f64 / total;
    }
    Ok(MetricReport {
        acc,
        uar: (recalls[0] + recalls[1]) / 2.0,
        wa_f1,
        auc: f64::NAN,
        confusion,
    })
}

/// Full report from fake-class probabilities, thresholded at 0.5.
pub fn report(fake_prob: &[f64], labels: &[u8]) -> Result<MetricReport> {
    let preds: Vec<u8> = fake_prob.iter().map(|&p| (p > 0.5) as u8).collect();
    let mut r = classification_metrics(&preds, labels)?;
    r.auc = auc(fake_prob, labels)?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4, 0.6], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn uar_from_confusion() {
        // confusion [[1,1],[0,2]]
        let r = classification_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.confusion, [[1, 1], [0, 2]]);
        assert_eq!(r.uar, 0.75);
    }
}
