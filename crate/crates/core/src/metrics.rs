//! Per-datapoint scores and binned calibration error.
//!
//! Logarithmic quantities are in nats.

use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, ProbMatrix};
use crate::error::{Error, Result};
use crate::LIKELIHOOD_EPS;

/// Default number of confidence bins for ECE / rESCE.
pub const DEFAULT_CALIBRATION_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ZeroOne,
    Nll,
    Brier,
    Entropy,
    QuadUncertainty,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ZeroOne => "zero_one",
            MetricKind::Nll => "nll",
            MetricKind::Brier => "brier",
            MetricKind::Entropy => "entropy",
            MetricKind::QuadUncertainty => "quad_uncertainty",
        }
    }

    /// Metrics that need labels.
    pub fn is_score(self) -> bool {
        matches!(self, MetricKind::ZeroOne | MetricKind::Nll | MetricKind::Brier)
    }

    pub fn evaluate(self, probs: &ProbMatrix, labels: &LabelVector) -> Result<MetricVector> {
        match self {
            MetricKind::ZeroOne => zero_one_error(probs, labels),
            MetricKind::Nll => nll(probs, labels),
            MetricKind::Brier => brier(probs, labels),
            MetricKind::Entropy => Ok(entropy(probs)),
            MetricKind::QuadUncertainty => Ok(quad_uncertainty(probs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricVector {
    pub kind: MetricKind,
    pub values: Vec<f64>,
}

impl MetricVector {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

fn check_labels(probs: &ProbMatrix, labels: &LabelVector) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.n_classes() != probs.cols() {
        return Err(Error::Dimension(format!(
            "labels declare {} classes, predictions have {}",
            labels.n_classes(),
            probs.cols()
        )));
    }
    Ok(())
}

/// Squared Euclidean distance between each row and its one-hot target.
pub fn brier(probs: &ProbMatrix, labels: &LabelVector) -> Result<MetricVector> {
    check_labels(probs, labels)?;
    let values = probs
        .iter_rows()
        .zip(labels.values())
        .map(|(row, &y)| brier_row(row, y))
        .collect();
    Ok(MetricVector { kind: MetricKind::Brier, values })
}

pub(crate) fn brier_row(row: &[f64], y: usize) -> f64 {
    row.iter()
        .enumerate()
        .map(|(c, &p)| {
            let d = p - if c == y { 1.0 } else { 0.0 };
            d * d
        })
        .sum()
}

/// `-ln p_y`, with `p_y` clamped below at [`LIKELIHOOD_EPS`].
pub fn nll(probs: &ProbMatrix, labels: &LabelVector) -> Result<MetricVector> {
    check_labels(probs, labels)?;
    let values = probs
        .iter_rows()
        .zip(labels.values())
        .map(|(row, &y)| -row[y].max(LIKELIHOOD_EPS).ln())
        .collect();
    Ok(MetricVector { kind: MetricKind::Nll, values })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    best
}

pub fn zero_one_error(probs: &ProbMatrix, labels: &LabelVector) -> Result<MetricVector> {
    check_labels(probs, labels)?;
    let values = probs
        .iter_rows()
        .zip(labels.values())
        .map(|(row, &y)| if argmax(row) == y { 0.0 } else { 1.0 })
        .collect();
    Ok(MetricVector { kind: MetricKind::ZeroOne, values })
}

pub(crate) fn entropy_row(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub(crate) fn quad_row(row: &[f64]) -> f64 {
    1.0 - row.iter().map(|p| p * p).sum::<f64>()
}

/// Shannon entropy of each row.
pub fn entropy(probs: &ProbMatrix) -> MetricVector {
    MetricVector { kind: MetricKind::Entropy, values: probs.iter_rows().map(entropy_row).collect() }
}

/// `1 - ||p||²` for each row.
pub fn quad_uncertainty(probs: &ProbMatrix) -> MetricVector {
    MetricVector {
        kind: MetricKind::QuadUncertainty,
        values: probs.iter_rows().map(quad_row).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub n_bins: usize,
    pub bin_counts: Vec<usize>,
    /// Mean confidence per bin (0 for empty bins).
    pub bin_confidence: Vec<f64>,
    /// Accuracy per bin (0 for empty bins).
    pub bin_accuracy: Vec<f64>,
    pub ece: f64,
    pub resce: f64,
}

/// Confidence-binned ECE and rESCE.
///
/// Confidence is the max row probability; a point with confidence `c` lands
/// in bin `ceil(c * n_bins)` (1-based) of the equal-width partition of (0, 1].
pub fn calibration(probs: &ProbMatrix, labels: &LabelVector, n_bins: usize) -> Result<CalibrationSummary> {
    check_labels(probs, labels)?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one bin".into()));
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0.0; n_bins];
    for (row, &y) in probs.iter_rows().zip(labels.values()) {
        let pred = argmax(row);
        let conf = row[pred];
        let bin = ((conf * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        counts[bin] += 1;
        conf_sum[bin] += conf;
        if pred == y {
            correct[bin] += 1.0;
        }
    }
    let n = probs.rows() as f64;
    let mut ece = 0.0;
    let mut esce = 0.0;
    let mut bin_confidence = vec![0.0; n_bins];
    let mut bin_accuracy = vec![0.0; n_bins];
    for b in 0..n_bins {
        if counts[b] == 0 {
            continue;
        }
        let k = counts[b] as f64;
        bin_confidence[b] = conf_sum[b] / k;
        bin_accuracy[b] = correct[b] / k;
        let gap = bin_accuracy[b] - bin_confidence[b];
        ece += k / n * gap.abs();
        esce += k / n * gap * gap;
    }
    Ok(CalibrationSummary {
        n_bins,
        bin_counts: counts,
        bin_confidence,
        bin_accuracy,
        ece,
        resce: esce.sqrt(),
    })
}
