//! Prediction containers and ensemble formation.
//!
//! Probabilities are always held as `f64`, whatever width they were ingested
//! at, so that the decomposition identities can be checked near machine
//! precision.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;

/// Row-stochastic tolerance for a validated [`ProbMatrix`].
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Raw per-class scores (log-probabilities up to a per-row constant).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, values.len())?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest(format!(
                "non-finite logit at row {} (column {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// `N × C` matrix of class probabilities, one row per datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ProbMatrix {
    /// Builds a matrix whose rows must already sum to one within
    /// [`STOCHASTIC_TOL`] with every entry in `[0, 1]`.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, values.len())?;
        for (i, row) in values.chunks_exact(cols).enumerate() {
            check_row(i, row, STOCHASTIC_TOL)?;
        }
        Ok(Self { rows, cols, values })
    }

    /// Accepts rows within `tol` of stochastic and rescales them to sum to
    /// one; rows further off are rejected.
    pub fn renormalized(rows: usize, cols: usize, mut values: Vec<f64>, tol: f64) -> Result<Self> {
        check_shape(rows, cols, values.len())?;
        for (i, row) in values.chunks_exact_mut(cols).enumerate() {
            check_row(i, row, tol)?;
            let sum: f64 = row.iter().sum();
            if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged probability rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.cols)
    }
}

fn check_shape(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::Dimension("matrix must have at least one row".into()));
    }
    if cols < 2 {
        return Err(Error::Dimension(format!("need at least 2 classes, got {cols}")));
    }
    if rows * cols != len {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} matrix needs {} values, got {len}",
            rows * cols
        )));
    }
    Ok(())
}

fn check_row(i: usize, row: &[f64], tol: f64) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Ingest(format!("row {i}: probability {p} outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Ingest(format!("row {i}: probabilities sum to {sum}")));
    }
    Ok(())
}

/// Numerically stable row-wise softmax.
pub fn softmax(logits: &LogitMatrix) -> ProbMatrix {
    let mut values = Vec::with_capacity(logits.values.len());
    for i in 0..logits.rows {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        values.extend(row.iter().map(|&z| (z - max).exp()));
        let sum: f64 = values[start..].iter().sum();
        values[start..].iter_mut().for_each(|p| *p /= sum);
    }
    ProbMatrix::from_raw(logits.rows, logits.cols, values)
}

/// Class indices for one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    values: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(values: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some((row, &label)) = values.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::LabelOutOfRange { row, label: label as i64, classes: n_classes });
        }
        Ok(Self { values, n_classes })
    }

    /// Converts signed labels as read from disk.
    pub fn from_i32(raw: &[i32], n_classes: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(raw.len());
        for (row, &y) in raw.iter().enumerate() {
            if y < 0 || y as usize >= n_classes {
                return Err(Error::LabelOutOfRange { row, label: y as i64, classes: n_classes });
            }
            values.push(y as usize);
        }
        Ok(Self { values, n_classes })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrediction {
    pub model_id: String,
    pub dataset_id: String,
    pub probs: ProbMatrix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    /// Architecture / recipe shared by seed replicas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleDef {
    pub ensemble_id: String,
    pub member_model_ids: Vec<String>,
}

impl EnsembleDef {
    pub fn new(ensemble_id: impl Into<String>, members: Vec<String>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let distinct: BTreeSet<&String> = members.iter().collect();
        if distinct.len() != members.len() {
            return Err(Error::InvalidArgument("ensemble members must be distinct".into()));
        }
        Ok(Self { ensemble_id: ensemble_id.into(), member_model_ids: members })
    }

    /// Ensemble named by its members joined with `+`.
    pub fn from_members(members: Vec<String>) -> Result<Self> {
        let id = members.join("+");
        Self::new(id, members)
    }
}

/// Keyed predictions plus per-dataset labels. Immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionStore {
    datasets: BTreeMap<String, LabelVector>,
    dataset_order: Vec<String>,
    models: Vec<ModelInfo>,
    predictions: BTreeMap<(String, String), ProbMatrix>,
    pairs: Vec<(String, String)>,
    ensembles: Vec<EnsembleDef>,
}

impl PredictionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_dataset(&mut self, id: impl Into<String>, labels: LabelVector) -> Result<()> {
        let id = id.into();
        if self.datasets.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("dataset {id:?} registered twice")));
        }
        self.dataset_order.push(id.clone());
        self.datasets.insert(id, labels);
        Ok(())
    }

    pub fn add_model(&mut self, info: ModelInfo) -> Result<()> {
        if self.models.iter().any(|m| m.id == info.id) {
            return Err(Error::InvalidArgument(format!("model {:?} registered twice", info.id)));
        }
        self.models.push(info);
        Ok(())
    }

    pub fn insert(&mut self, pred: ModelPrediction) -> Result<()> {
        let labels = self.datasets.get(&pred.dataset_id).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown dataset {:?}", pred.dataset_id))
        })?;
        if pred.probs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "model {:?} has {} rows on dataset {:?}, which has {} labels",
                pred.model_id,
                pred.probs.rows(),
                pred.dataset_id,
                labels.len()
            )));
        }
        if pred.probs.cols() != labels.n_classes() {
            return Err(Error::Dimension(format!(
                "model {:?} has {} classes on dataset {:?}, expected {}",
                pred.model_id,
                pred.probs.cols(),
                pred.dataset_id,
                labels.n_classes()
            )));
        }
        if !self.models.iter().any(|m| m.id == pred.model_id) {
            self.models.push(ModelInfo { id: pred.model_id.clone(), group: None });
        }
        let key = (pred.model_id, pred.dataset_id);
        if self.predictions.contains_key(&key) {
            return Err(Error::InvalidArgument(format!(
                "duplicate prediction for model {:?} on dataset {:?}",
                key.0, key.1
            )));
        }
        self.predictions.insert(key, pred.probs);
        Ok(())
    }

    pub fn add_pair(&mut self, ind: impl Into<String>, ood: impl Into<String>) -> Result<()> {
        let (ind, ood) = (ind.into(), ood.into());
        for id in [&ind, &ood] {
            if !self.datasets.contains_key(id) {
                return Err(Error::InvalidArgument(format!("pair references unknown dataset {id:?}")));
            }
        }
        self.pairs.push((ind, ood));
        Ok(())
    }

    pub fn add_ensemble(&mut self, def: EnsembleDef) -> Result<()> {
        for m in &def.member_model_ids {
            if !self.models.iter().any(|info| &info.id == m) {
                return Err(Error::InvalidArgument(format!(
                    "ensemble {:?} references unknown model {m:?}",
                    def.ensemble_id
                )));
            }
        }
        self.ensembles.push(def);
        Ok(())
    }

    /// Dataset ids in registration order.
    pub fn dataset_ids(&self) -> &[String] {
        &self.dataset_order
    }

    pub fn has_dataset(&self, id: &str) -> bool {
        self.datasets.contains_key(id)
    }

    pub fn labels(&self, dataset: &str) -> Result<&LabelVector> {
        self.datasets
            .get(dataset)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset {dataset:?}")))
    }

    pub fn models(&self) -> &[ModelInfo] {
        &self.models
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn ensembles(&self) -> &[EnsembleDef] {
        &self.ensembles
    }

    pub fn prediction(&self, model: &str, dataset: &str) -> Result<&ProbMatrix> {
        self.predictions
            .get(&(model.to_owned(), dataset.to_owned()))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no prediction for model {model:?} on dataset {dataset:?}"))
            })
    }

    pub fn has_prediction(&self, model: &str, dataset: &str) -> bool {
        self.predictions.contains_key(&(model.to_owned(), dataset.to_owned()))
    }

    /// Models grouped by their `group` tag, in first-seen order. Untagged
    /// models are left out.
    pub fn groups(&self) -> Vec<(String, Vec<String>)> {
        let mut out: Vec<(String, Vec<String>)> = Vec::new();
        for m in &self.models {
            let Some(g) = &m.group else { continue };
            match out.iter_mut().find(|(name, _)| name == g) {
                Some((_, ids)) => ids.push(m.id.clone()),
                None => out.push((g.clone(), vec![m.id.clone()])),
            }
        }
        out
    }

    pub fn member_predictions(&self, def: &EnsembleDef, dataset: &str) -> Result<Vec<&ProbMatrix>> {
        def.member_model_ids
            .iter()
            .map(|m| self.prediction(m, dataset))
            .collect()
    }

    pub fn ensemble_prediction(&self, def: &EnsembleDef, dataset: &str) -> Result<ProbMatrix> {
        form_ensemble(&self.member_predictions(def, dataset)?)
    }
}

/// Uniform mixture of the members' predictive distributions.
pub fn form_ensemble(members: &[&ProbMatrix]) -> Result<ProbMatrix> {
    let first = check_members(members, 1)?;
    let m = members.len() as f64;
    let mut values = vec![0.0; first.values.len()];
    for member in members {
        for (acc, p) in values.iter_mut().zip(&member.values) {
            *acc += p;
        }
    }
    values.iter_mut().for_each(|v| *v /= m);
    Ok(ProbMatrix::from_raw(first.rows, first.cols, values))
}

/// Checks that all members share a shape and returns the first.
pub(crate) fn check_members<'a>(members: &[&'a ProbMatrix], min: usize) -> Result<&'a ProbMatrix> {
    if members.len() < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} ensemble members, got {}",
            members.len()
        )));
    }
    let first = members[0];
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.rows != first.rows || m.cols != first.cols {
            return Err(Error::Dimension(format!(
                "member {i} is {}x{}, member 0 is {}x{}",
                m.rows, m.cols, first.rows, first.cols
            )));
        }
    }
    Ok(first)
}

/// All `size`-subsets of `ids`, lexicographic in the input order.
pub fn enumerate_homogeneous_ensembles(ids: &[String], size: usize) -> Result<Vec<EnsembleDef>> {
    if size > ids.len() {
        return Err(Error::InvalidArgument(format!(
            "ensemble size {size} exceeds the {} available models",
            ids.len()
        )));
    }
    if size < 2 {
        return Err(Error::InvalidArgument("ensemble size must be at least 2".into()));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        let members = idx.iter().map(|&i| ids[i].clone()).collect();
        out.push(EnsembleDef::from_members(members)?);
        // advance to the next combination
        let Some(pos) = (0..size).rev().find(|&p| idx[p] != p + ids.len() - size) else {
            break;
        };
        idx[pos] += 1;
        for q in pos + 1..size {
            idx[q] = idx[q - 1] + 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyBin {
    pub lo: f64,
    pub hi: f64,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedBin {
    pub bin: usize,
    pub n_models: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterogeneousEnsembles {
    pub ensembles: Vec<EnsembleDef>,
    pub bins: Vec<AccuracyBin>,
    pub skipped: Vec<SkippedBin>,
    /// Always `"equal-width over [min acc, max acc]"`.
    pub bin_rule: &'static str,
}

/// Groups every model with predictions on `ind_dataset` into equal-width
/// accuracy bins and draws one ensemble of `members_per_ensemble` models from
/// each bin that is large enough.
pub fn form_heterogeneous_ensembles(
    store: &PredictionStore,
    ind_dataset: &str,
    n_bins: usize,
    members_per_ensemble: usize,
    seed: u64,
) -> Result<HeterogeneousEnsembles> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be positive".into()));
    }
    if members_per_ensemble < 2 {
        return Err(Error::InvalidArgument("members_per_ensemble must be at least 2".into()));
    }
    let labels = store.labels(ind_dataset)?;
    let mut accs = Vec::new();
    for info in store.models() {
        if !store.has_prediction(&info.id, ind_dataset) {
            continue;
        }
        let probs = store.prediction(&info.id, ind_dataset)?;
        let err = metrics::zero_one_error(probs, labels)?.mean();
        accs.push((info.id.clone(), 1.0 - err));
    }
    if accs.is_empty() {
        return Err(Error::InvalidArgument(format!("no models evaluated on {ind_dataset:?}")));
    }
    let lo = accs.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
    let hi = accs.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<AccuracyBin> = (0..n_bins)
        .map(|b| AccuracyBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == n_bins { hi } else { lo + (b + 1) as f64 * width },
            models: Vec::new(),
        })
        .collect();
    for (id, acc) in accs {
        let b = if hi > lo { (((acc - lo) / (hi - lo)) * n_bins as f64) as usize } else { 0 };
        bins[b.min(n_bins - 1)].models.push(id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ensembles = Vec::new();
    let mut skipped = Vec::new();
    for (b, bin) in bins.iter().enumerate() {
        if bin.models.is_empty() {
            continue;
        }
        if bin.models.len() < members_per_ensemble {
            skipped.push(SkippedBin {
                bin: b,
                n_models: bin.models.len(),
                reason: format!("fewer than {members_per_ensemble} models"),
            });
            continue;
        }
        let mut picked =
            rand::seq::index::sample(&mut rng, bin.models.len(), members_per_ensemble).into_vec();
        picked.sort_unstable();
        let members = picked.into_iter().map(|i| bin.models[i].clone()).collect();
        ensembles.push(EnsembleDef::new(format!("hetero-bin{b}"), members)?);
    }
    Ok(HeterogeneousEnsembles {
        ensembles,
        bins,
        skipped,
        bin_rule: "equal-width over [min acc, max acc]",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn softmax_examples() {
        let l = LogitMatrix::new(3, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 101.0, 102.0, 103.0]).unwrap();
        let p = softmax(&l);
        assert_abs_diff_eq!(p.row(0)[0], 1.0 / 3.0, epsilon = 1e-15);
        for (got, want) in p.row(1).iter().zip([0.09003, 0.24473, 0.66524]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-5);
        }
        for (a, b) in p.row(1).iter().zip(p.row(2)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let two = softmax(&LogitMatrix::new(1, 2, vec![0.0, 0.0]).unwrap());
        assert_eq!(two.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite_with_row() {
        let err = LogitMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn softmax_huge_logits_stay_finite() {
        let p = softmax(&LogitMatrix::new(1, 2, vec![1000.0, -1000.0]).unwrap());
        assert_eq!(p.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn ensemble_examples() {
        let a = ProbMatrix::from_rows(&[vec![1.0, 0.0], vec![0.7, 0.3]]).unwrap();
        let b = ProbMatrix::from_rows(&[vec![0.0, 1.0], vec![0.1, 0.9]]).unwrap();
        let e = form_ensemble(&[&a, &b]).unwrap();
        assert_eq!(e.row(0), &[0.5, 0.5]);
        assert_abs_diff_eq!(e.row(1)[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(e.row(1)[1], 0.6, epsilon = 1e-15);
        let same = form_ensemble(&[&a, &a, &a]).unwrap();
        for (x, y) in same.values().iter().zip(a.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn ensemble_shape_mismatch() {
        let a = ProbMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = ProbMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(form_ensemble(&[&a, &b]), Err(Error::Dimension(_))));
    }

    #[test]
    fn homogeneous_counts_and_order() {
        let five = enumerate_homogeneous_ensembles(&ids(5), 4).unwrap();
        assert_eq!(five.len(), 5);
        assert_eq!(five[0].member_model_ids, vec!["m0", "m1", "m2", "m3"]);
        assert_eq!(five[4].member_model_ids, vec!["m1", "m2", "m3", "m4"]);
        assert_eq!(enumerate_homogeneous_ensembles(&ids(6), 4).unwrap().len(), 15);
        let all = enumerate_homogeneous_ensembles(&ids(3), 3).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].ensemble_id, "m0+m1+m2");
        assert!(enumerate_homogeneous_ensembles(&ids(3), 4).is_err());
    }

    #[test]
    fn renormalization_tolerance() {
        let ok = ProbMatrix::renormalized(1, 2, vec![0.5, 0.5000004], 1e-6).unwrap();
        assert_abs_diff_eq!(ok.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(ProbMatrix::renormalized(1, 2, vec![0.5, 0.51], 1e-6).is_err());
    }

    fn store_with_accuracies(accs: &[f64]) -> PredictionStore {
        // 100 points, class 0 always correct; model accuracy = fraction predicting class 0
        let n = 100;
        let mut store = PredictionStore::new();
        store.add_dataset("ind", LabelVector::new(vec![0; n], 2).unwrap()).unwrap();
        for (m, &acc) in accs.iter().enumerate() {
            let correct = (acc * n as f64).round() as usize;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| if i < correct { vec![0.9, 0.1] } else { vec![0.1, 0.9] })
                .collect();
            store
                .insert(ModelPrediction {
                    model_id: format!("m{m}"),
                    dataset_id: "ind".into(),
                    probs: ProbMatrix::from_rows(&rows).unwrap(),
                })
                .unwrap();
        }
        store
    }

    #[test]
    fn heterogeneous_identical_accuracy_single_bin() {
        let store = store_with_accuracies(&[0.8; 6]);
        let het = form_heterogeneous_ensembles(&store, "ind", 3, 4, 7).unwrap();
        assert_eq!(het.ensembles.len(), 1);
        assert_eq!(het.bins[0].models.len(), 6);
    }

    #[test]
    fn heterogeneous_forced_split() {
        let store = store_with_accuracies(&[0.5, 0.51, 0.52, 0.5, 0.9, 0.91, 0.92, 0.9]);
        let het = form_heterogeneous_ensembles(&store, "ind", 2, 4, 1).unwrap();
        assert_eq!(het.ensembles.len(), 2);
        assert_eq!(het.ensembles[0].member_model_ids, vec!["m0", "m1", "m2", "m3"]);
        assert_eq!(het.ensembles[1].member_model_ids, vec!["m4", "m5", "m6", "m7"]);
        assert!(het.skipped.is_empty());
    }

    #[test]
    fn heterogeneous_seeded_determinism_and_skips() {
        let accs = [0.5, 0.52, 0.54, 0.55, 0.56, 0.9, 0.91, 0.92, 0.93, 0.7];
        let store = store_with_accuracies(&accs);
        let a = form_heterogeneous_ensembles(&store, "ind", 2, 4, 11).unwrap();
        let b = form_heterogeneous_ensembles(&store, "ind", 2, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ensembles.len(), 2);
        let c = form_heterogeneous_ensembles(&store, "ind", 5, 4, 11).unwrap();
        assert!(!c.skipped.is_empty());
    }

    #[test]
    fn store_rejects_mismatched_rows() {
        let mut store = PredictionStore::new();
        store.add_dataset("d", LabelVector::new(vec![0, 1], 2).unwrap()).unwrap();
        let probs = ProbMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let err = store
            .insert(ModelPrediction { model_id: "m".into(), dataset_id: "d".into(), probs })
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
