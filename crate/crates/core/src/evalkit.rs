//! Offline ranking metrics.
//!
//! Tie conventions: AUROC gives half credit to tied positive/negative pairs;
//! average precision treats a block of tied scores as one cut, evaluating
//! precision at the block boundary.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                expected: scores.len(),
                got: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::Metric("no scored instances".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Metric("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Metric("NaN score".into()));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Indices grouped into blocks of equal score, blocks in descending
    /// score order. Each block is reported as `(positives, negatives)`.
    fn tied_blocks_descending(&self) -> Vec<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < idx.len() {
            let s = self.scores[idx[i]];
            let (mut pos, mut neg) = (0, 0);
            while i < idx.len() && self.scores[idx[i]].total_cmp(&s) == Ordering::Equal {
                if self.labels[idx[i]] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                i += 1;
            }
            blocks.push((pos, neg));
        }
        blocks
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic with half credit
/// for ties. O(n log n).
pub fn auroc(data: &ScoredLabels) -> Result<f64> {
    let pos = data.positives();
    let neg = data.labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUROC undefined: need both classes".into()));
    }
    // Walking from the top, each negative beats every positive still above it.
    let mut pos_above = 0u64;
    let mut twice_credit = 0u64;
    for (p, n) in data.tied_blocks_descending() {
        twice_credit += 2 * pos_above * n as u64 + (p as u64) * (n as u64);
        pos_above += p as u64;
    }
    Ok(twice_credit as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision over the precision–recall curve.
pub fn auprc(data: &ScoredLabels) -> Result<f64> {
    let total_pos = data.positives();
    if total_pos == 0 {
        return Err(Error::Metric("AUPRC undefined: no positive labels".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (p, n) in data.tied_blocks_descending() {
        tp += p;
        seen += p + n;
        if p > 0 {
            ap += (tp as f64 / seen as f64) * (p as f64 / total_pos as f64);
        }
    }
    Ok(ap)
}

/// Weighted mean binary cross-entropy. Scores must lie strictly in (0, 1).
pub fn logloss(data: &ScoredLabels, weights: Option<&[f64]>) -> Result<f64> {
    if let Some(w) = weights {
        if w.len() != data.scores.len() {
            return Err(Error::Dimension {
                expected: data.scores.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Metric("weights must be positive and finite".into()));
        }
    }
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, (&p, &y)) in data.scores.iter().zip(&data.labels).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Metric(format!("score {p} at index {i} outside (0, 1)")));
        }
        let w = weights.map_or(1.0, |w| w[i]);
        let loss = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        total += w * loss;
        wsum += w;
    }
    Ok(total / wsum)
}

/// Ranks starting at 1, ties receive the average of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Metric("spearman needs at least two points".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Metric("spearman undefined for constant input".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// The offline report for one method on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ctr_auroc: f64,
    pub ctr_auprc: f64,
    pub ctcvr_auroc: f64,
    pub ctcvr_auprc: f64,
    pub logloss: f64,
}

/// Evaluates predicted CTRs against click labels and click-and-convert
/// labels. `logloss` is against the click labels.
pub fn evaluate(scores: &[f64], clicks: &[u8], conversions: &[u8]) -> Result<EvalReport> {
    let ctr = ScoredLabels::new(scores.to_vec(), clicks.to_vec())?;
    let ctcvr = ScoredLabels::new(scores.to_vec(), conversions.to_vec())?;
    Ok(EvalReport {
        ctr_auroc: auroc(&ctr)?,
        ctr_auprc: auprc(&ctr)?,
        ctcvr_auroc: auroc(&ctcvr)?,
        ctcvr_auprc: auprc(&ctcvr)?,
        logloss: logloss(&ctr, None)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(scores: &[f64], labels: &[u8]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&sl(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&sl(&[0.5; 4], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auroc(&sl(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0])).unwrap(), 0.75);
    }

    #[test]
    fn auroc_single_class_is_error() {
        let err = auroc(&sl(&[0.1, 0.2], &[1, 1])).unwrap_err();
        assert!(err.to_string().contains("AUROC undefined"));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&sl(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auprc(&sl(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1])).unwrap(), 0.25);
        assert_eq!(auprc(&sl(&[0.3, 0.1, 0.3], &[1, 1, 1])).unwrap(), 1.0);
        assert!(auprc(&sl(&[0.3, 0.1], &[0, 0])).is_err());
    }

    #[test]
    fn auprc_tied_block_uses_boundary_precision() {
        // One block of four with two positives: precision 0.5 at the only cut.
        assert_eq!(auprc(&sl(&[0.4; 4], &[1, 0, 0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn logloss_examples() {
        let half = logloss(&sl(&[0.5, 0.5, 0.5], &[1, 0, 1]), None).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let single = logloss(&sl(&[0.9], &[1]), None).unwrap();
        assert!((single - 0.105_360_515_657_826_3).abs() < 1e-12);
        let data = sl(&[0.2, 0.7, 0.9], &[0, 1, 0]);
        let w = [1.0, 3.0, 0.5];
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let a = logloss(&data, Some(&w)).unwrap();
        let b = logloss(&data, Some(&w2)).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(logloss(&sl(&[1.0], &[1]), None).is_err());
        assert!(logloss(&sl(&[0.0], &[0]), None).is_err());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(ScoredLabels::new(vec![0.1, 0.2], vec![1]).is_err());
        assert!(ScoredLabels::new(vec![], vec![]).is_err());
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&a, &[1.0; 4]).is_err());
    }
}
