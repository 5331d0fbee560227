//! Bag-level metrics and feature-space diagnostics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{pca_top2, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let n_pos = labels.iter().filter(|&&l| l).count();
    (n_pos, labels.len() - n_pos)
}

fn check_inputs(scores: &[f64], labels: &[bool], op: &'static str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(crate::error::shape_mismatch(op, &[scores.len()], &[labels.len()]));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op, index: i });
    }
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "{op} needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    Ok((n_pos, n_neg))
}

/// Accuracy and balanced accuracy at `threshold`; `score >= threshold`
/// predicts positive. The returned `auc` field is NaN.
pub fn accuracy_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let (n_pos, n_neg) = check_inputs(scores, labels, "accuracy_metrics")?;
    let mut tp = 0usize;
    let mut tn = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    let recall_pos = tp as f64 / n_pos as f64;
    let recall_neg = tn as f64 / n_neg as f64;
    Ok(MetricsReport {
        balanced_accuracy: (recall_pos + recall_neg) / 2.0,
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        auc: f64::NAN,
        n_pos,
        n_neg,
        threshold,
    })
}

/// Mann–Whitney AUC: ties between a positive and a negative count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels, "roc_auc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the concordant count keeps the ½ credit in integers.
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        let (p, n) = class_counts(&order[i..j].iter().map(|&k| labels[k]).collect::<Vec<_>>());
        twice += p as u128 * (2 * neg_below + n as u128);
        neg_below += n as u128;
        i = j;
    }
    Ok(twice as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Full report: threshold metrics plus AUC.
pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let mut r = accuracy_metrics(scores, labels, threshold)?;
    r.auc = roc_auc(scores, labels)?;
    Ok(r)
}

pub const HISTOGRAM_BINS: usize = 80;
pub const REPORTED_THRESHOLDS: [f64; 2] = [0.9, 0.999];

/// Counts over `bins` equal bins on [-1, 1]; the last bin includes 1.
pub fn cosine_histogram(cosines: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    let width = 2.0 / bins as f64;
    for (i, &c) in cosines.iter().enumerate() {
        if !(-1.0..=1.0).contains(&c) {
            return Err(Error::Domain {
                op: "cosine_histogram",
                detail: format!("value {c} at index {i} is outside [-1, 1]"),
            });
        }
        let k = (((c + 1.0) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(counts)
}

/// Left edges and right edges of the histogram bins.
pub fn histogram_edges(bins: usize) -> Vec<(f64, f64)> {
    let width = 2.0 / bins as f64;
    (0..bins)
        .map(|k| (-1.0 + k as f64 * width, -1.0 + (k + 1) as f64 * width))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub anchor_index: usize,
    pub threshold: f64,
    /// Neighbors of the anchor above `threshold`, itself excluded.
    pub neighbor_count: usize,
    pub cosines: Vec<f64>,
    pub histogram: Vec<usize>,
    /// `(threshold, fraction of all features with cosine > threshold)`.
    pub fraction_above: Vec<(f64, f64)>,
}

impl AnchorReport {
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        fraction_above(&self.cosines, threshold)
    }
}

fn fraction_above(cosines: &[f64], t: f64) -> f64 {
    if cosines.is_empty() {
        return 0.0;
    }
    cosines.iter().filter(|&&c| c > t).count() as f64 / cosines.len() as f64
}

pub const UNIT_NORM_TOL: f64 = 1e-6;

fn check_unit_rows(features: &Tensor, op: &'static str) -> Result<()> {
    for r in 0..features.rows() {
        let norm = features.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Domain {
                op,
                detail: format!("row {r} has norm {norm}, expected unit norm"),
            });
        }
    }
    Ok(())
}

/// Picks the feature with the most neighbors strictly above `threshold`
/// (lowest index on ties) and reports cosines from it to every feature.
pub fn densest_anchor(features: &Tensor, threshold: f64) -> Result<AnchorReport> {
    if features.rank() != 2 || features.rows() < 2 {
        return Err(Error::InvalidBatch(format!(
            "densest_anchor needs at least 2 features, got shape {:?}",
            features.shape()
        )));
    }
    check_unit_rows(features, "densest_anchor")?;
    let n = features.rows();
    let counts = neighbor_counts(features, threshold);
    let mut anchor = 0;
    for i in 1..n {
        if counts[i] > counts[anchor] {
            anchor = i;
        }
    }
    let a = features.row(anchor);
    let cosines: Vec<f64> = (0..n)
        .map(|j| crate::numcore::kernels::dot(a, features.row(j)).clamp(-1.0, 1.0))
        .collect();
    let histogram = cosine_histogram(&cosines, HISTOGRAM_BINS)?;
    let fraction_above = REPORTED_THRESHOLDS.iter().map(|&t| (t, self::fraction_above(&cosines, t))).collect();
    Ok(AnchorReport {
        anchor_index: anchor,
        threshold,
        neighbor_count: counts[anchor],
        cosines,
        histogram,
        fraction_above,
    })
}

fn neighbor_counts(features: &Tensor, threshold: f64) -> Vec<usize> {
    let n = features.rows();
    let count_row = |i: usize| -> usize {
        let a = features.row(i);
        (0..n)
            .filter(|&j| j != i && crate::numcore::kernels::dot(a, features.row(j)) > threshold)
            .count()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if crate::numcore::kernels::execution() == crate::numcore::kernels::Execution::Parallel {
            return (0..n).into_par_iter().map(count_row).collect();
        }
    }
    (0..n).map(count_row).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaPoint {
    pub x: f64,
    pub y: f64,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSpread {
    pub points: Vec<PcaPoint>,
    /// `(group, max − min of the first coordinate)` in first-seen order.
    pub pc1_range: Vec<(String, f64)>,
    pub explained_variance: [f64; 2],
}

impl PcaSpread {
    pub fn range_of(&self, group: &str) -> Option<f64> {
        self.pc1_range.iter().find(|(g, _)| g == group).map(|&(_, r)| r)
    }
}

/// Projects the pooled features on their top two principal components.
pub fn pca_spread(features: &Tensor, groups: &[String]) -> Result<PcaSpread> {
    if groups.len() != features.rows() {
        return Err(crate::error::shape_mismatch("pca_spread", features.shape(), &[groups.len()]));
    }
    let pca = pca_top2(features)?;
    let mut pc1_range: Vec<(String, f64, f64)> = Vec::new();
    let mut points = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let p = pca.projected.row(i);
        match pc1_range.iter_mut().find(|(name, _, _)| name == g) {
            Some((_, lo, hi)) => {
                *lo = lo.min(p[0]);
                *hi = hi.max(p[0]);
            }
            None => pc1_range.push((g.clone(), p[0], p[0])),
        }
        points.push(PcaPoint {
            x: p[0],
            y: p[1],
            group: g.clone(),
        });
    }
    Ok(PcaSpread {
        points,
        pc1_range: pc1_range.into_iter().map(|(g, lo, hi)| (g, hi - lo)).collect(),
        explained_variance: pca.explained_variance,
    })
}

/// Population variance of the features, summed over coordinates.
pub fn total_variance(features: &Tensor) -> f64 {
    let n = features.rows();
    if n == 0 {
        return 0.0;
    }
    let d = features.cols();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = 0.0;
    for r in 0..n {
        for (m, v) in mean.iter().zip(features.row(r)) {
            var += (v - m) * (v - m);
        }
    }
    var / n as f64
}

/// Sample mean and standard deviation (n − 1 divisor; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
