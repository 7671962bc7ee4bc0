//! Threshold-sweep evaluation of anomaly scores.
//!
//! Convention throughout: a higher score means more anomalous and a sample is
//! predicted positive (anomalous) iff `score >= threshold`. Thresholds are
//! enumerated at the distinct score values only, so tied scores always move
//! together.
//!
//! AUC-PR uses the non-interpolated step estimator (average precision): the
//! precision achieved at each threshold weighted by the recall gained there.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Identifies the AUC-PR estimator in report metadata.
pub const AUC_PR_ESTIMATOR: &str = "step (non-interpolated average precision)";

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryScoreSet {
    scores: Vec<f64>,
    positive: Vec<bool>,
}

impl BinaryScoreSet {
    /// `positive[i]` marks sample `i` as anomalous.
    pub fn new(scores: Vec<f64>, positive: Vec<bool>) -> Result<Self> {
        if scores.len() != positive.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: positive.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite score {s}")));
        }
        Ok(BinaryScoreSet { scores, positive })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Result<Self> {
        let (scores, positive) = pairs.into_iter().unzip();
        Self::new(scores, positive)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.positive
    }

    pub fn positives(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::invalid(format!(
                "curve metrics need both classes (positives {p}, negatives {n})"
            )));
        }
        Ok((p, n))
    }

    /// Cumulative `(threshold, tp, fp)` at each distinct score, descending.
    fn sweep(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out: Vec<(f64, usize, usize)> = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (rank, &i) in order.iter().enumerate() {
            if self.positive[i] {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_group = order
                .get(rank + 1)
                .is_none_or(|&next| self.scores[next] != self.scores[i]);
            if last_of_group {
                out.push((self.scores[i], tp, fp));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
}

impl RocPoint {
    fn new(threshold: f64, tpr: f64, fpr: f64) -> Self {
        RocPoint {
            threshold,
            tpr,
            fpr,
            fnr: 1.0 - tpr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The three headline numbers for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub eer: f64,
}

/// ROC points from `(0, 0)` at `+inf` to `(1, 1)` at `-inf`, with one point
/// per distinct score in between.
pub fn roc_curve(set: &BinaryScoreSet) -> Result<Vec<RocPoint>> {
    let (p, n) = set.require_both_classes()?;
    let (p, n) = (p as f64, n as f64);
    let mut points = vec![RocPoint::new(f64::INFINITY, 0.0, 0.0)];
    for (threshold, tp, fp) in set.sweep() {
        points.push(RocPoint::new(threshold, tp as f64 / p, fp as f64 / n));
    }
    points.push(RocPoint::new(f64::NEG_INFINITY, 1.0, 1.0));
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`].
pub fn auc_roc(set: &BinaryScoreSet) -> Result<f64> {
    let curve = roc_curve(set)?;
    Ok(curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

/// One `(precision, recall)` point per distinct score, descending threshold.
pub fn pr_curve(set: &BinaryScoreSet) -> Result<Vec<PrPoint>> {
    let (p, _) = set.require_both_classes()?;
    Ok(set
        .sweep()
        .into_iter()
        .map(|(threshold, tp, fp)| PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / p as f64,
        })
        .collect())
}

pub fn auc_pr(set: &BinaryScoreSet) -> Result<f64> {
    let curve = pr_curve(set)?;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for pt in curve {
        area += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    Ok(area)
}

/// Equal error rate: the rate at which FPR = FNR on the ROC sweep, linearly
/// interpolated between the two bracketing points when no point hits it.
pub fn eer(set: &BinaryScoreSet) -> Result<f64> {
    let curve = roc_curve(set)?;
    // fpr - fnr runs from -1 at the first point to +1 at the last
    let gap = |pt: &RocPoint| pt.fpr - pt.fnr;
    let idx = curve
        .iter()
        .position(|pt| gap(pt) >= 0.0)
        .expect("last ROC point has fpr - fnr = 1");
    let hi = &curve[idx];
    if gap(hi) == 0.0 {
        return Ok(hi.fpr);
    }
    let lo = &curve[idx - 1];
    let t = -gap(lo) / (gap(hi) - gap(lo));
    Ok(lo.fpr + t * (hi.fpr - lo.fpr))
}

pub fn evaluate(set: &BinaryScoreSet) -> Result<Metrics> {
    Ok(Metrics {
        auc_roc: auc_roc(set)?,
        auc_pr: auc_pr(set)?,
        eer: eer(set)?,
    })
}

/// `100 * online / offline`, rounded to two decimals.
pub fn retention(online_metric: f64, offline_metric: f64) -> Result<f64> {
    if !(offline_metric > 0.0) || !offline_metric.is_finite() {
        return Err(Error::invalid(format!(
            "retention needs a positive offline metric, got {offline_metric}"
        )));
    }
    if !online_metric.is_finite() {
        return Err(Error::invalid(format!("non-finite online metric {online_metric}")));
    }
    Ok((10_000.0 * online_metric / offline_metric).round() / 100.0)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(out, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,recall,precision\n");
    for p in points {
        writeln!(out, "{:?},{:?},{:?}", p.threshold, p.recall, p.precision).unwrap();
    }
    out
}
