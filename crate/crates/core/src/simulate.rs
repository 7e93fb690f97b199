//! Synthetic ensembles with a known generating process.
//!
//! A teacher maps a 2-D latent input to class logits through a random affine
//! map. Labels are drawn from the teacher softmax. Member `m` rescales the
//! teacher logits by a log-normal temperature `exp(s·g_m)`, `g_m ~ N(0, 1)`,
//! so members disagree mostly about confidence and diversity tracks the
//! teacher margin. An optional additive perturbation, affine in the latent
//! input, decouples the two. The OOD dataset draws inputs from the same
//! Gaussian translated along the diagonal.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{softmax, LabelVector, LogitMatrix, ModelInfo, ModelPrediction, PredictionStore};
use crate::error::{Error, Result};

pub const IND_ID: &str = "ind";
pub const OOD_ID: &str = "ood";
const TEACHER_SCALE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_points: usize,
    pub n_classes: usize,
    pub n_models: usize,
    /// Standard deviation `s` of the log-temperature of each member.
    pub member_noise_scale: f64,
    /// Translation of the OOD inputs, in latent standard deviations.
    pub shift_strength: f64,
    pub seed: u64,
    /// Models are assigned round-robin to groups; group `g` scales the member
    /// noise by `1 + g / 2`.
    #[serde(default = "one")]
    pub n_groups: usize,
    /// Scale of the additive member perturbation `A_m x + c_m`.
    #[serde(default)]
    pub latent_noise_scale: f64,
}

fn one() -> usize {
    1
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_points: 1000,
            n_classes: 10,
            n_models: 5,
            member_noise_scale: 0.5,
            shift_strength: 0.0,
            seed: 0,
            n_groups: 1,
            latent_noise_scale: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.n_models == 0 || self.n_groups == 0 {
            return Err(Error::InvalidArgument("synthetic counts must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("synthetic data needs at least 2 classes".into()));
        }
        if ![self.member_noise_scale, self.shift_strength, self.latent_noise_scale].iter().all(|v| *v >= 0.0) {
            return Err(Error::InvalidArgument("noise scales and shift strength must be non-negative".into()));
        }
        Ok(())
    }

    pub fn model_id(&self, m: usize) -> String {
        format!("m{m:03}")
    }

    pub fn group_of(&self, m: usize) -> usize {
        m % self.n_groups
    }
}

/// Raw logits as written to disk (f32-representable values).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub labels: BTreeMap<String, LabelVector>,
    pub models: Vec<ModelInfo>,
    pub logits: BTreeMap<(String, String), LogitMatrix>,
}

impl SyntheticData {
    pub fn dataset_ids(&self) -> [&'static str; 2] {
        [IND_ID, OOD_ID]
    }

    pub fn to_store(&self) -> Result<PredictionStore> {
        let mut store = PredictionStore::new();
        for id in self.dataset_ids() {
            store.add_dataset(id, self.labels[id].clone())?;
        }
        for info in &self.models {
            store.add_model(info.clone())?;
        }
        for ((model, dataset), logits) in &self.logits {
            store.insert(ModelPrediction {
                model_id: model.clone(),
                dataset_id: dataset.clone(),
                probs: softmax(logits),
            })?;
        }
        store.add_pair(IND_ID, OOD_ID)?;
        Ok(store)
    }
}

struct Affine {
    weights: Vec<[f64; 2]>,
    bias: Vec<f64>,
}

impl Affine {
    fn random(rng: &mut ChaCha8Rng, classes: usize) -> Self {
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        let weights = (0..classes).map(|_| [n(), n()]).collect();
        let bias = (0..classes).map(|_| n()).collect();
        Self { weights, bias }
    }

    fn apply(&self, x: [f64; 2], c: usize) -> f64 {
        self.weights[c][0] * x[0] + self.weights[c][1] * x[1] + self.bias[c]
    }
}

/// Deterministic in `spec.seed`.
pub fn simulate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let c = spec.n_classes;
    let mut param_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    param_rng.set_stream(0);
    let teacher = Affine::random(&mut param_rng, c);
    let members: Vec<(f64, Affine)> = (0..spec.n_models)
        .map(|_| (param_rng.sample::<f64, _>(StandardNormal), Affine::random(&mut param_rng, c)))
        .collect();

    let models: Vec<ModelInfo> = (0..spec.n_models)
        .map(|m| ModelInfo {
            id: spec.model_id(m),
            group: (spec.n_groups > 1).then(|| format!("g{}", spec.group_of(m))),
        })
        .collect();

    let mut labels = BTreeMap::new();
    let mut logits = BTreeMap::new();
    let offset = spec.shift_strength / std::f64::consts::SQRT_2;
    for (stream, (dataset, shift)) in [(IND_ID, 0.0), (OOD_ID, offset)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream as u64 + 1);
        let xs: Vec<[f64; 2]> = (0..spec.n_points)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [a + shift, b + shift]
            })
            .collect();
        let teacher_logits: Vec<f64> =
            xs.iter().flat_map(|&x| (0..c).map(|k| TEACHER_SCALE * teacher.apply(x, k)).collect::<Vec<_>>()).collect();
        let teacher_probs = softmax(&LogitMatrix::new(spec.n_points, c, teacher_logits.clone())?);
        let ys = teacher_probs
            .iter_rows()
            .map(|row| {
                WeightedIndex::new(row)
                    .map(|w| w.sample(&mut rng))
                    .map_err(|e| Error::numerical("simulate", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        labels.insert(dataset.to_string(), LabelVector::new(ys, c)?);

        for (m, (g, member)) in members.iter().enumerate() {
            let factor = 1.0 + spec.group_of(m) as f64 / 2.0;
            let temperature = (spec.member_noise_scale * factor * g).exp();
            let additive = spec.latent_noise_scale * factor;
            let values: Vec<f64> = xs
                .iter()
                .enumerate()
                .flat_map(|(i, &x)| {
                    let t = &teacher_logits[i * c..(i + 1) * c];
                    (0..c).map(move |k| (t[k] * temperature + additive * member.apply(x, k)) as f32 as f64)
                })
                .collect();
            logits.insert(
                (spec.model_id(m), dataset.to_string()),
                LogitMatrix::new(spec.n_points, c, values)?,
            );
        }
    }
    Ok(SyntheticData { spec: spec.clone(), labels, models, logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::decompose_quadratic;

    fn small(noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_points: 50,
            n_classes: 4,
            n_models: 3,
            member_noise_scale: noise,
            latent_noise_scale: noise,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(simulate(&small(0.5, 9)).unwrap(), simulate(&small(0.5, 9)).unwrap());
        assert_ne!(simulate(&small(0.5, 9)).unwrap(), simulate(&small(0.5, 10)).unwrap());
    }

    #[test]
    fn zero_noise_gives_identical_members() {
        let store = simulate(&small(0.0, 1)).unwrap().to_store().unwrap();
        let ids = store.model_ids();
        let members: Vec<_> = ids.iter().map(|m| store.prediction(m, IND_ID).unwrap()).collect();
        assert!(members.windows(2).all(|w| w[0] == w[1]));
        let rec = decompose_quadratic(&members).unwrap();
        assert!(rec.diversity.iter().all(|&d| d.abs() < 1e-15));
    }

    #[test]
    fn binary_temperature_members_tie_diversity_to_uncertainty() {
        // with two classes both quantities are functions of the teacher margin
        let spec = SyntheticSpec { n_classes: 2, n_points: 400, member_noise_scale: 1.0, ..Default::default() };
        let store = simulate(&spec).unwrap().to_store().unwrap();
        let ids = store.model_ids();
        let members: Vec<_> = ids.iter().map(|m| store.prediction(m, IND_ID).unwrap()).collect();
        let rec = decompose_quadratic(&members).unwrap();
        let ens = crate::data::form_ensemble(&members).unwrap();
        let mut by_margin: Vec<(f64, f64)> =
            ens.iter_rows().map(|r| (r[0] - 0.5).abs()).zip(rec.diversity.iter().copied()).collect();
        by_margin.sort_by(|a, b| a.0.total_cmp(&b.0));
        let close = by_margin.windows(2).filter(|w| w[1].0 - w[0].0 < 1e-6).all(|w| (w[1].1 - w[0].1).abs() < 1e-4);
        assert!(close);
    }

    #[test]
    fn logits_are_f32_values() {
        let data = simulate(&small(0.7, 2)).unwrap();
        for l in data.logits.values() {
            for i in 0..l.rows() {
                assert!(l.row(i).iter().all(|&v| v as f32 as f64 == v));
            }
        }
    }

    #[test]
    fn shift_moves_inputs_not_labels_count() {
        let base = simulate(&small(0.5, 3)).unwrap();
        let shifted = simulate(&SyntheticSpec { shift_strength: 3.0, ..small(0.5, 3) }).unwrap();
        assert_eq!(base.labels[IND_ID], shifted.labels[IND_ID]);
        assert_eq!(shifted.labels[OOD_ID].len(), 50);
        assert_ne!(base.logits[&("m000".into(), OOD_ID.into())], shifted.logits[&("m000".into(), OOD_ID.into())]);
    }

    #[test]
    fn groups_are_round_robin() {
        let data = simulate(&SyntheticSpec { n_groups: 2, ..small(0.5, 0) }).unwrap();
        let groups: Vec<_> = data.models.iter().map(|m| m.group.clone().unwrap()).collect();
        assert_eq!(groups, ["g0", "g1", "g0"]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(simulate(&SyntheticSpec { n_classes: 1, ..small(0.5, 0) }).is_err());
        assert!(simulate(&SyntheticSpec { member_noise_scale: -1.0, ..small(0.5, 0) }).is_err());
        assert!(simulate(&SyntheticSpec { n_points: 0, ..small(0.5, 0) }).is_err());
    }
}
