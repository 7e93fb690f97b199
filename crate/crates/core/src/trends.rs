//! InD-vs-OOD generalization trends across models.
//!
//! Each model contributes one point: its dataset-mean metric on the InD set
//! (x) and on the OOD set (y). Ordinary least squares with intercept gives the
//! trend; residuals against the single-model trend measure effective
//! robustness. Axes are untransformed unless logit scaling is requested.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{EnsembleDef, LabelVector, PredictionStore, ProbMatrix};
use crate::decomposition::variance_diversity;
use crate::error::{Error, Result};
use crate::metrics::{self, DEFAULT_CALIBRATION_BINS};

const MODULE: &str = "robustness_trends";

/// Dataset-level metrics that can be trended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMetric {
    ZeroOne,
    Nll,
    Brier,
    Ece,
    Resce,
}

impl TrendMetric {
    pub const ALL: [TrendMetric; 5] =
        [TrendMetric::ZeroOne, TrendMetric::Nll, TrendMetric::Brier, TrendMetric::Ece, TrendMetric::Resce];

    pub fn name(self) -> &'static str {
        match self {
            TrendMetric::ZeroOne => "01",
            TrendMetric::Nll => "nll",
            TrendMetric::Brier => "brier",
            TrendMetric::Ece => "ece",
            TrendMetric::Resce => "resce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "01" | "zero_one" | "error" => TrendMetric::ZeroOne,
            "nll" => TrendMetric::Nll,
            "brier" => TrendMetric::Brier,
            "ece" => TrendMetric::Ece,
            "resce" => TrendMetric::Resce,
            other => return Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        })
    }

    /// Dataset aggregate of this metric.
    pub fn evaluate(self, probs: &ProbMatrix, labels: &LabelVector, calibration_bins: usize) -> Result<f64> {
        Ok(match self {
            TrendMetric::ZeroOne => metrics::zero_one_error(probs, labels)?.mean(),
            TrendMetric::Nll => metrics::nll(probs, labels)?.mean(),
            TrendMetric::Brier => metrics::brier(probs, labels)?.mean(),
            TrendMetric::Ece => metrics::calibration(probs, labels, calibration_bins)?.ece,
            TrendMetric::Resce => metrics::calibration(probs, labels, calibration_bins)?.resce,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    Single,
    Ensemble,
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendPoint {
    pub model_id: String,
    pub model_class: ModelClass,
    pub ind_value: f64,
    pub ood_value: f64,
    pub metric: TrendMetric,
}

/// OLS summary of `ood = coefficient · ind + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendFit {
    pub coefficient: f64,
    pub intercept: f64,
    pub std_error: f64,
    pub t_statistic: f64,
    /// Two-sided, against a zero slope, `n - 2` degrees of freedom.
    pub p_value: f64,
    pub r2: f64,
    pub n: usize,
}

impl TrendFit {
    pub fn predict(&self, ind_value: f64) -> f64 {
        self.coefficient * ind_value + self.intercept
    }
}

pub fn fit_trend(points: &[TrendPoint]) -> Result<TrendFit> {
    let x: Vec<f64> = points.iter().map(|p| p.ind_value).collect();
    let y: Vec<f64> = points.iter().map(|p| p.ood_value).collect();
    fit_xy(&x, &y)
}

struct Moments {
    slope: f64,
    intercept: f64,
    sxx: f64,
    syy: f64,
    ss_res: f64,
}

fn ols(x: &[f64], y: &[f64]) -> Result<Moments> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::degenerate(MODULE, "zero variance in InD values; trend undefined"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    Ok(Moments { slope, intercept, sxx, syy, ss_res })
}

pub fn fit_xy(x: &[f64], y: &[f64]) -> Result<TrendFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} x-values vs {} y-values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("a trend fit needs at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::degenerate(MODULE, "non-finite trend point"));
    }
    let m = ols(x, y)?;
    let dof = (n - 2) as f64;
    let std_error = (m.ss_res / dof / m.sxx).sqrt();
    let (t_statistic, p_value) = if std_error > 0.0 {
        let t = m.slope / std_error;
        let dist = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::numerical(MODULE, format!("t distribution: {e}")))?;
        (t, 2.0 * dist.sf(t.abs()))
    } else if m.slope == 0.0 {
        (0.0, 1.0)
    } else {
        (m.slope.signum() * f64::INFINITY, 0.0)
    };
    let r2 = if m.syy > 0.0 { (1.0 - m.ss_res / m.syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(TrendFit { coefficient: m.slope, intercept: m.intercept, std_error, t_statistic, p_value, r2, n })
}

/// Baseline-predicted OOD value minus the observed one. Every metric here is
/// lower-is-better, so positive means effectively robust.
pub fn effective_robustness(point: &TrendPoint, baseline: &TrendFit) -> f64 {
    baseline.predict(point.ind_value) - point.ood_value
}

fn logit(v: f64) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!("logit axis scaling needs values in (0, 1), got {v}")));
    }
    Ok((v / (1.0 - v)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendConfig {
    pub calibration_bins: usize,
    pub logit_scale: bool,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self { calibration_bins: DEFAULT_CALIBRATION_BINS, logit_scale: false }
    }
}

/// One trend point per model/ensemble and metric for a dataset pair.
pub fn collect_points(
    store: &PredictionStore,
    ensembles: &[EnsembleDef],
    heterogeneous: &[EnsembleDef],
    metrics: &[TrendMetric],
    pair: (&str, &str),
    cfg: &TrendConfig,
) -> Result<Vec<TrendPoint>> {
    let (ind, ood) = pair;
    let (li, lo) = (store.labels(ind)?, store.labels(ood)?);
    let mut out = Vec::new();
    let mut push = |id: &str, class: ModelClass, pi: &ProbMatrix, po: &ProbMatrix| -> Result<()> {
        for &metric in metrics {
            let mut x = metric.evaluate(pi, li, cfg.calibration_bins)?;
            let mut y = metric.evaluate(po, lo, cfg.calibration_bins)?;
            if cfg.logit_scale {
                x = logit(x)?;
                y = logit(y)?;
            }
            out.push(TrendPoint { model_id: id.to_owned(), model_class: class, ind_value: x, ood_value: y, metric });
        }
        Ok(())
    };
    for info in store.models() {
        if store.has_prediction(&info.id, ind) && store.has_prediction(&info.id, ood) {
            push(&info.id, ModelClass::Single, store.prediction(&info.id, ind)?, store.prediction(&info.id, ood)?)?;
        }
    }
    for (defs, class) in [(ensembles, ModelClass::Ensemble), (heterogeneous, ModelClass::Heterogeneous)] {
        for def in defs {
            let pi = store.ensemble_prediction(def, ind)?;
            let po = store.ensemble_prediction(def, ood)?;
            push(&def.ensemble_id, class, &pi, &po)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClassGroup {
    All,
    #[serde(rename = "Single Model")]
    SingleModel,
    Ensemble,
    #[serde(rename = "Heterogeneous Ensemble")]
    Heterogeneous,
}

impl ClassGroup {
    pub fn label(self) -> &'static str {
        match self {
            ClassGroup::All => "All",
            ClassGroup::SingleModel => "Single Model",
            ClassGroup::Ensemble => "Ensemble",
            ClassGroup::Heterogeneous => "Heterogeneous Ensemble",
        }
    }

    /// `All` is single models plus homogeneous ensembles.
    pub fn contains(self, class: ModelClass) -> bool {
        match self {
            ClassGroup::All => matches!(class, ModelClass::Single | ModelClass::Ensemble),
            ClassGroup::SingleModel => class == ModelClass::Single,
            ClassGroup::Ensemble => class == ModelClass::Ensemble,
            ClassGroup::Heterogeneous => class == ModelClass::Heterogeneous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendRow {
    pub metric: TrendMetric,
    pub class: ClassGroup,
    /// `None` when the group has fewer than 3 points or no InD spread.
    pub fit: Option<TrendFit>,
    pub n_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One fit per metric and class group, in the order (metric, All, Single
/// Model, Ensemble[, Heterogeneous Ensemble]).
pub fn trend_table(points: &[TrendPoint], metrics: &[TrendMetric]) -> Vec<TrendRow> {
    let has_hetero = points.iter().any(|p| p.model_class == ModelClass::Heterogeneous);
    let mut groups = vec![ClassGroup::All, ClassGroup::SingleModel, ClassGroup::Ensemble];
    if has_hetero {
        groups.push(ClassGroup::Heterogeneous);
    }
    let mut rows = Vec::new();
    for &metric in metrics {
        for &class in &groups {
            let sel: Vec<TrendPoint> = points
                .iter()
                .filter(|p| p.metric == metric && class.contains(p.model_class))
                .cloned()
                .collect();
            let (fit, note) = match fit_trend(&sel) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(TrendRow { metric, class, fit, n_points: sel.len(), note });
        }
    }
    rows
}

/// Outcome of comparing the OOD/InD ratio of mean ensemble variance with the
/// slope of the member Brier trend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiversityRatio {
    pub mean_variance_ind: f64,
    pub mean_variance_ood: f64,
    pub ratio: f64,
    /// Slope of member OOD Brier on member InD Brier.
    pub c0: f64,
    pub discrepancy: f64,
}

/// If member and ensemble Brier scores lie on one line with slope `c0`, the
/// OOD/InD ratio of dataset-mean ensemble variance equals `c0`.
pub fn diversity_ratio_check(
    members_ind: &[&ProbMatrix],
    labels_ind: &LabelVector,
    members_ood: &[&ProbMatrix],
    labels_ood: &LabelVector,
) -> Result<DiversityRatio> {
    if members_ind.len() != members_ood.len() {
        return Err(Error::Dimension("member lists differ between InD and OOD".into()));
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let vi = mean(variance_diversity(members_ind)?);
    let vo = mean(variance_diversity(members_ood)?);
    if !(vi > 0.0) {
        return Err(Error::degenerate(MODULE, "zero InD ensemble variance; ratio undefined"));
    }
    let bi = members_ind
        .iter()
        .map(|m| Ok(metrics::brier(m, labels_ind)?.mean()))
        .collect::<Result<Vec<_>>>()?;
    let bo = members_ood
        .iter()
        .map(|m| Ok(metrics::brier(m, labels_ood)?.mean()))
        .collect::<Result<Vec<_>>>()?;
    let c0 = ols(&bi, &bo)?.slope;
    let ratio = vo / vi;
    Ok(DiversityRatio { mean_variance_ind: vi, mean_variance_ood: vo, ratio, c0, discrepancy: ratio - c0 })
}

/// [`diversity_ratio_check`] for an ensemble of a store on a dataset pair.
pub fn diversity_ratio_for(store: &PredictionStore, def: &EnsembleDef, pair: (&str, &str)) -> Result<DiversityRatio> {
    diversity_ratio_check(
        &store.member_predictions(def, pair.0)?,
        store.labels(pair.0)?,
        &store.member_predictions(def, pair.1)?,
        store.labels(pair.1)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(xy: &[(f64, f64)], class: ModelClass) -> Vec<TrendPoint> {
        xy.iter()
            .enumerate()
            .map(|(i, &(x, y))| TrendPoint {
                model_id: format!("m{i}"),
                model_class: class,
                ind_value: x,
                ood_value: y,
                metric: TrendMetric::ZeroOne,
            })
            .collect()
    }

    #[test]
    fn exact_line() {
        let p = pts(&[(0.1, 1.2), (0.2, 1.4), (0.5, 2.0), (0.9, 2.8)], ModelClass::Single);
        let f = fit_trend(&p).unwrap();
        assert_abs_diff_eq!(f.coefficient, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 1.0, epsilon = 1e-12);
        assert_eq!(f.r2, 1.0);
        for q in &p {
            assert_abs_diff_eq!(effective_robustness(q, &f), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_computed_fit() {
        let f = fit_trend(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 4.0)], ModelClass::Single)).unwrap();
        assert_abs_diff_eq!(f.coefficient, 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r2, 1.0 - 0.3 / 8.75, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r2, 0.9657, epsilon = 1e-4);
        // s² = 0.3 / 2, se = sqrt(s² / Sxx) with Sxx = 5
        assert_abs_diff_eq!(f.std_error, (0.15f64 / 5.0).sqrt(), epsilon = 1e-12);
        assert_eq!(f.n, 4);
        // t = 7.5055 on 2 dof: two-sided p from the closed form 1 - t / sqrt(t² + 2)
        let t = f.t_statistic;
        assert_abs_diff_eq!(f.p_value, 1.0 - t / (t * t + 2.0).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_trend(&pts(&[(0.0, 0.0), (1.0, 1.0)], ModelClass::Single)).is_err());
        let flat = pts(&[(0.5, 0.0), (0.5, 1.0), (0.5, 2.0)], ModelClass::Single);
        assert!(matches!(fit_trend(&flat), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn robustness_sign() {
        let f = TrendFit { coefficient: 1.0, intercept: 0.1, std_error: 0.0, t_statistic: 0.0, p_value: 0.0, r2: 1.0, n: 3 };
        let p = &pts(&[(0.2, 0.25)], ModelClass::Ensemble)[0];
        assert_abs_diff_eq!(effective_robustness(p, &f), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn residuals_average_to_zero() {
        let p = pts(&[(0.1, 0.3), (0.2, 0.33), (0.4, 0.5), (0.45, 0.61), (0.7, 0.77)], ModelClass::Single);
        let f = fit_trend(&p).unwrap();
        let mean = p.iter().map(|q| effective_robustness(q, &f)).sum::<f64>() / p.len() as f64;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn single_class_table_all_equals_single() {
        let p = pts(&[(0.1, 0.3), (0.2, 0.33), (0.4, 0.5), (0.7, 0.77)], ModelClass::Single);
        let rows = trend_table(&p, &[TrendMetric::ZeroOne]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].fit, rows[1].fit);
        assert!(rows[2].fit.is_none());
        assert_eq!(rows[2].n_points, 0);
    }

    #[test]
    fn all_is_union_of_classes() {
        let mut p = pts(&[(0.1, 0.3), (0.2, 0.33), (0.4, 0.5)], ModelClass::Single);
        p.extend(pts(&[(0.15, 0.31), (0.3, 0.4), (0.5, 0.6), (0.6, 0.7)], ModelClass::Ensemble));
        p.extend(pts(&[(0.15, 0.31), (0.3, 0.4), (0.5, 0.6)], ModelClass::Heterogeneous));
        let rows = trend_table(&p, &[TrendMetric::ZeroOne]);
        assert_eq!(rows[0].n_points, rows[1].n_points + rows[2].n_points);
        assert_eq!(rows[3].class, ClassGroup::Heterogeneous);
    }

    #[test]
    fn logit_requires_unit_interval() {
        assert!(logit(1.2).is_err());
        assert_abs_diff_eq!(logit(0.5).unwrap(), 0.0, epsilon = 1e-15);
    }
}
