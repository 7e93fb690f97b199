//! Seeded inputs shared by the benchmarks.

use ensdiv_core::conditional::{JointSample, Source};
use ensdiv_core::ProbMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `members` random probability matrices of shape `n × c`.
pub fn random_members(members: usize, n: usize, c: usize, seed: u64) -> Vec<ProbMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..members)
        .map(|_| {
            let mut v: Vec<f64> = (0..n * c).map(|_| rng.random::<f64>() + 1e-3).collect();
            for row in v.chunks_mut(c) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
            }
            ProbMatrix::new(n, c, v).expect("rows are normalized")
        })
        .collect()
}

/// Points scattered around a smooth diversity curve.
pub fn random_joint(n: usize, seed: u64) -> JointSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let avg: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
    let div = avg.iter().map(|x| 0.1 * x * (1.0 - x) + 0.01 * rng.random::<f64>()).collect();
    JointSample::new(avg, div, Source::InD).expect("finite sample")
}

/// `m` two-dimensional points.
pub fn random_cloud(m: usize, shift: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| [rng.random::<f64>() + shift, rng.random::<f64>()]).collect()
}
