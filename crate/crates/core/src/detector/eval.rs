use serde::{Deserialize, Serialize};

use super::DetectorModel;
use crate::error::{Error, Result};
use crate::manifest::DatasetRow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub z_score: f64,
    /// Decision threshold `T`; `None` when the model weight is not positive.
    pub threshold: Option<f64>,
}

impl EvalMetrics {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn true_positive_rate(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn true_negative_rate(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Confusion counts at probability 0.5, rank-statistic AUC and the
/// one-proportion z-score of the accuracy against chance.
pub fn evaluate(model: &DetectorModel, rows: &[DatasetRow]) -> Result<EvalMetrics> {
    if rows.is_empty() {
        return Err(Error::Domain("empty test set".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut scores = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for row in rows {
        let p = model.predict(row.f_avg);
        match (p.risky, row.oracle_risky) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
        scores.push(p.probability);
        labels.push(row.oracle_risky);
    }
    let accuracy = (tp + tn) as f64 / rows.len() as f64;
    Ok(EvalMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy,
        auc: auc(&scores, &labels)?,
        z_score: z_score(accuracy, rows.len()),
        threshold: model.threshold(),
    })
}

/// Mann-Whitney AUC with tied scores given their average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Domain(
            "AUC is undefined when the test set has a single class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let rank = (i + j + 2) as f64 / 2.0;
        positive_rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One-proportion z-test against 0.5: `(accuracy − 0.5) / sqrt(0.25 / n)`.
pub fn z_score(accuracy: f64, n: usize) -> f64 {
    (accuracy - 0.5) / (0.25 / n as f64).sqrt()
}

/// Fraction of pixels the trigger array does not have to read:
/// `(W·H − cols·rows) / (W·H)`.
pub fn sampling_reduction(width: usize, height: usize, cols: usize, rows: usize) -> Result<f64> {
    let (pixels, nodes) = (width * height, cols * rows);
    if pixels == 0 || cols > width || rows > height {
        return Err(Error::Domain(format!(
            "grid {cols}x{rows} does not fit a {width}x{height} frame"
        )));
    }
    Ok((pixels - nodes) as f64 / pixels as f64)
}
