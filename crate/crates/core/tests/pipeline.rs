use ensdiv_core::conditional::{joint_samples, permutation_test, JointSample, PermutationConfig, Source};
use ensdiv_core::data::enumerate_homogeneous_ensembles;
use ensdiv_core::decomposition::{decompose_quadratic, UncertaintyFamily};
use ensdiv_core::io::{load_store, save_store, save_synthetic};
use ensdiv_core::simulate::{simulate, SyntheticSpec, IND_ID, OOD_ID};
use ensdiv_core::trends::{collect_points, trend_table, ClassGroup, TrendConfig, TrendMetric};
use ensdiv_core::ProbMatrix;

fn binary_spec(seed: u64, n_points: usize) -> SyntheticSpec {
    SyntheticSpec { n_points, n_classes: 2, n_models: 5, member_noise_scale: 1.0, seed, ..Default::default() }
}

#[test]
fn synthetic_store_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(&SyntheticSpec { n_points: 64, n_classes: 5, n_models: 4, ..Default::default() }).unwrap();
    let manifest = save_synthetic(&data, dir.path()).unwrap();
    let store = load_store(&manifest).unwrap();
    assert_eq!(store, data.to_store().unwrap());
    let again = tempfile::tempdir().unwrap();
    let m2 = save_store(&store, again.path()).unwrap();
    let reloaded = load_store(&m2).unwrap();
    let members: Vec<&ProbMatrix> = store.model_ids().iter().map(|m| reloaded.prediction(m, IND_ID).unwrap()).collect();
    assert!(decompose_quadratic(&members).unwrap().max_abs_residual() < ensdiv_core::IDENTITY_TOL);
}

#[test]
fn split_halves_of_one_dataset_look_alike() {
    let mut close = 0;
    for seed in 0..10 {
        let store = simulate(&binary_spec(seed, 400)).unwrap().to_store().unwrap();
        let ids = store.model_ids();
        let members: Vec<&ProbMatrix> = ids.iter().map(|m| store.prediction(m, IND_ID).unwrap()).collect();
        let all = joint_samples(&members, UncertaintyFamily::Quadratic, Source::InD).unwrap();
        let half = all.len() / 2;
        let a = JointSample::new(all.avg[..half].to_vec(), all.div[..half].to_vec(), Source::InD).unwrap();
        let b = JointSample::new(all.avg[half..].to_vec(), all.div[half..].to_vec(), Source::OOD).unwrap();
        let r = permutation_test(&a, &b, &PermutationConfig { n_surrogates: 19, seed, ..Default::default() }).unwrap();
        if r.d.abs() < 0.02 {
            close += 1;
        }
    }
    assert!(close >= 8, "{close}/10");
}

#[test]
fn single_class_trend_all_equals_that_class() {
    let store = simulate(&SyntheticSpec { n_models: 6, shift_strength: 1.0, ..binary_spec(3, 200) })
        .unwrap()
        .to_store()
        .unwrap();
    let pts = collect_points(&store, &[], &[], &[TrendMetric::Brier], (IND_ID, OOD_ID), &TrendConfig::default()).unwrap();
    let rows = trend_table(&pts, &[TrendMetric::Brier]);
    let all = rows.iter().find(|r| r.class == ClassGroup::All).unwrap();
    let single = rows.iter().find(|r| r.class == ClassGroup::SingleModel).unwrap();
    assert_eq!(all.fit, single.fit);
    assert_eq!(all.n_points, 6);

    let ens = enumerate_homogeneous_ensembles(&store.model_ids(), 3).unwrap();
    let pts = collect_points(&store, &ens, &[], &[TrendMetric::Brier], (IND_ID, OOD_ID), &TrendConfig::default()).unwrap();
    assert_eq!(pts.len(), 6 + 20);
}
