//! On-disk manifest format.
//!
//! `manifest.json` lists datasets, models and InD/OOD pairs. Prediction files
//! are raw little-endian `f32`, row-major `N x C`, no header. Label files are
//! raw little-endian `i32` of length `N`. Relative paths resolve against the
//! manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{softmax, EnsembleDef, LabelVector, LogitMatrix, ModelInfo, ModelPrediction, PredictionStore, ProbMatrix};
use crate::error::{Error, Result};
use crate::simulate::SyntheticData;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Rows ingested as probabilities may be off by this much before they are
/// rejected instead of renormalized.
pub const PROB_INGEST_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Logits,
    Probs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub n: usize,
    pub c: usize,
    pub labels_file: String,
    pub kind: DataKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEntry {
    pub id: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<DatasetEntry>,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub pairs: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensembles: Option<Vec<EnsembleEntry>>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }
}

fn read_bytes(path: &Path, expected: usize, what: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Ingest(format!(
            "{what}: {} has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect()
}

fn decode_i32(bytes: &[u8]) -> Vec<i32> {
    bytes.chunks_exact(4).map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

fn context(what: String) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Io { .. } | Error::Json { .. } => e,
        other => Error::Ingest(format!("{what}: {other}")),
    }
}

/// Loads and validates every file referenced by the manifest.
pub fn load_store(manifest_path: &Path) -> Result<PredictionStore> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut store = PredictionStore::new();
    let mut kinds = BTreeMap::new();

    for ds in &manifest.datasets {
        let what = format!("dataset {:?} labels", ds.id);
        let bytes = read_bytes(&resolve(base, &ds.labels_file), ds.n * 4, &what)?;
        let labels = LabelVector::from_i32(&decode_i32(&bytes), ds.c).map_err(context(what))?;
        store.add_dataset(ds.id.clone(), labels)?;
        kinds.insert(ds.id.clone(), ds);
    }
    for model in &manifest.models {
        store.add_model(ModelInfo { id: model.id.clone(), group: model.group.clone() })?;
        for (dataset, file) in &model.files {
            let ds = kinds.get(dataset).ok_or_else(|| {
                Error::Ingest(format!("model {:?} references unknown dataset {dataset:?}", model.id))
            })?;
            let what = format!("model {:?} on dataset {dataset:?}", model.id);
            let bytes = read_bytes(&resolve(base, file), ds.n * ds.c * 4, &what)?;
            let values = decode_f32(&bytes);
            let probs = match ds.kind {
                DataKind::Logits => LogitMatrix::new(ds.n, ds.c, values).map(|l| softmax(&l)),
                DataKind::Probs => ProbMatrix::renormalized(ds.n, ds.c, values, PROB_INGEST_TOL),
            }
            .map_err(context(what))?;
            store.insert(ModelPrediction { model_id: model.id.clone(), dataset_id: dataset.clone(), probs })?;
        }
    }
    for [ind, ood] in &manifest.pairs {
        store.add_pair(ind.clone(), ood.clone())?;
    }
    for e in manifest.ensembles.iter().flatten() {
        store.add_ensemble(EnsembleDef::new(e.id.clone(), e.members.clone())?)?;
    }
    Ok(store)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_f32(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn encode_labels(labels: &LabelVector) -> Vec<u8> {
    labels.values().iter().flat_map(|&y| (y as i32).to_le_bytes()).collect()
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    save_record(&path, manifest)?;
    Ok(path)
}

fn file_name(model: &str, dataset: &str) -> String {
    format!("preds/{model}/{dataset}.f32")
}

/// Writes the store as `kind = "probs"`. Values are narrowed to `f32`, so a
/// reload is bit-identical only for f32-representable, exactly stochastic rows.
pub fn save_store(store: &PredictionStore, dir: &Path) -> Result<PathBuf> {
    let mut datasets = Vec::new();
    for id in store.dataset_ids() {
        let labels = store.labels(id)?;
        let labels_file = format!("labels/{id}.i32");
        write_file(&dir.join(&labels_file), &encode_labels(labels))?;
        datasets.push(DatasetEntry { id: id.clone(), n: labels.len(), c: labels.n_classes(), labels_file, kind: DataKind::Probs });
    }
    let mut models = Vec::new();
    for info in store.models() {
        let mut files = BTreeMap::new();
        for ds in store.dataset_ids() {
            if let Ok(probs) = store.prediction(&info.id, ds) {
                let f = file_name(&info.id, ds);
                write_file(&dir.join(&f), &encode_f32(probs.values().iter().copied()))?;
                files.insert(ds.clone(), f);
            }
        }
        models.push(ModelEntry { id: info.id.clone(), group: info.group.clone(), files });
    }
    let ensembles = (!store.ensembles().is_empty()).then(|| {
        store
            .ensembles()
            .iter()
            .map(|e| EnsembleEntry { id: e.ensemble_id.clone(), members: e.member_model_ids.clone() })
            .collect()
    });
    let pairs = store.pairs().iter().map(|(a, b)| [a.clone(), b.clone()]).collect();
    write_manifest(dir, &Manifest { datasets, models, pairs, ensembles })
}

/// Writes synthetic logits as `kind = "logits"`.
pub fn save_synthetic(data: &SyntheticData, dir: &Path) -> Result<PathBuf> {
    let mut datasets = Vec::new();
    for id in data.dataset_ids() {
        let labels = &data.labels[id];
        let labels_file = format!("labels/{id}.i32");
        write_file(&dir.join(&labels_file), &encode_labels(labels))?;
        datasets.push(DatasetEntry {
            id: id.to_string(),
            n: labels.len(),
            c: labels.n_classes(),
            labels_file,
            kind: DataKind::Logits,
        });
    }
    let mut models = Vec::new();
    for info in &data.models {
        let mut files = BTreeMap::new();
        for ds in data.dataset_ids() {
            let logits = &data.logits[&(info.id.clone(), ds.to_string())];
            let f = file_name(&info.id, ds);
            let values = (0..logits.rows()).flat_map(|i| logits.row(i).to_vec());
            write_file(&dir.join(&f), &encode_f32(values))?;
            files.insert(ds.to_string(), f);
        }
        models.push(ModelEntry { id: info.id.clone(), group: info.group.clone(), files });
    }
    let [ind, ood] = data.dataset_ids();
    write_manifest(dir, &Manifest { datasets, models, pairs: vec![[ind.into(), ood.into()]], ensembles: None })
}

/// Pretty-printed JSON with a trailing newline.
pub fn save_record<T: Serialize + ?Sized>(path: &Path, record: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(record).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, SyntheticSpec};

    fn tiny_store() -> PredictionStore {
        let mut store = PredictionStore::new();
        store.add_dataset("a", LabelVector::new(vec![0, 1], 2).unwrap()).unwrap();
        store.add_dataset("b", LabelVector::new(vec![1, 1], 2).unwrap()).unwrap();
        for (m, p) in [("x", 0.25), ("y", 0.625)] {
            for ds in ["a", "b"] {
                let probs = ProbMatrix::new(2, 2, vec![p, 1.0 - p, 0.5, 0.5]).unwrap();
                store.insert(ModelPrediction { model_id: m.into(), dataset_id: ds.into(), probs }).unwrap();
            }
        }
        store.add_pair("a", "b").unwrap();
        store.add_ensemble(EnsembleDef::from_members(vec!["x".into(), "y".into()]).unwrap()).unwrap();
        store
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = tiny_store();
        let path = save_store(&store, dir.path()).unwrap();
        assert_eq!(load_store(&path).unwrap(), store);
    }

    #[test]
    fn logits_are_softmaxed() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { n_points: 20, n_classes: 3, n_models: 2, ..Default::default() };
        let data = simulate(&spec).unwrap();
        let path = save_synthetic(&data, dir.path()).unwrap();
        let loaded = load_store(&path).unwrap();
        assert_eq!(loaded, data.to_store().unwrap());
        let row = loaded.prediction("m000", "ind").unwrap().row(0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_length_mismatch_names_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_store(&tiny_store(), dir.path()).unwrap();
        fs::write(dir.path().join("labels/b.i32"), [0u8; 4]).unwrap();
        let msg = load_store(&path).unwrap_err().to_string();
        assert!(msg.contains("\"b\""), "{msg}");
    }

    #[test]
    fn prediction_byte_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_store(&tiny_store(), dir.path()).unwrap();
        fs::write(dir.path().join(file_name("y", "a")), [0u8; 12]).unwrap();
        let msg = load_store(&path).unwrap_err().to_string();
        assert!(msg.contains("\"y\"") && msg.contains("\"a\""), "{msg}");
    }

    #[test]
    fn probs_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_store(&tiny_store(), dir.path()).unwrap();
        let write = |vals: [f32; 4]| {
            let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.path().join(file_name("x", "a")), bytes).unwrap();
        };
        write([0.25, 0.7500004, 0.5, 0.5]);
        let store = load_store(&path).unwrap();
        let row = store.prediction("x", "a").unwrap().row(0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        write([0.25, 0.76, 0.5, 0.5]);
        assert!(load_store(&path).is_err());
    }

    #[test]
    fn out_of_range_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_store(&tiny_store(), dir.path()).unwrap();
        let bytes: Vec<u8> = [0i32, 2].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.path().join("labels/a.i32"), bytes).unwrap();
        assert!(load_store(&path).is_err());
    }
}
