//! One-dimensional Gaussian-process regression with heteroskedastic noise.
//!
//! Reference behavior for a proper Bayesian model average: once conditioned
//! on training data from `[0, 5]`, the posterior (epistemic) variance on
//! `[-5, 0)` stays high even among predictions with the same likelihood
//! (aleatoric) variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_shifts, linspace};

const MODULE: &str = "gp_oracle";

pub const DEFAULT_TRAIN_POINTS: usize = 25;
pub const TRAIN_DOMAIN: (f64, f64) = (0.0, 5.0);
pub const EVAL_DOMAIN: (f64, f64) = (-5.0, 5.0);
pub const EVAL_POINTS: usize = 512;
pub const DEFAULT_VARIANCE_BINS: usize = 20;
/// Range of the heteroskedastic likelihood variance.
pub const LIKELIHOOD_VARIANCE_RANGE: (f64, f64) = (0.01, 1.01);
const PRIOR_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `sin²(x) + 0.01`
    Heteroskedastic,
    Constant(f64),
}

impl NoiseModel {
    pub fn variance(self, x: f64) -> f64 {
        match self {
            NoiseModel::Heteroskedastic => x.sin().powi(2) + 0.01,
            NoiseModel::Constant(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpModel {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise: NoiseModel,
}

impl GpModel {
    /// Zero-mean RBF prior with unit lengthscale and signal variance.
    pub fn new(train_x: Vec<f64>, train_y: Vec<f64>) -> Self {
        Self { train_x, train_y, lengthscale: 1.0, signal_variance: 1.0, noise: NoiseModel::Heteroskedastic }
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.lengthscale;
        self.signal_variance * (-0.5 * d * d).exp()
    }

    fn gram(&self, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), xs.len(), |i, j| self.kernel(xs[i], xs[j]))
    }
}

/// Draws noisy observations at `xs`: latent values jointly from the prior,
/// then `y ~ N(f(x), σ²(x))`.
pub fn sample_observations<R: Rng>(prior: &GpModel, xs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let k = prior.gram(xs);
    let (chol, _) = cholesky_with_shifts(&k, [PRIOR_JITTER, 1e-7, 1e-6, 1e-5])
        .ok_or_else(|| Error::numerical(MODULE, "prior covariance not positive definite"))?;
    let z = DVector::from_iterator(xs.len(), (0..xs.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let f = chol.l() * z;
    Ok(xs
        .iter()
        .zip(f.iter())
        .map(|(&x, &fx)| fx + prior.noise.variance(x).sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// `n` inputs uniform on `domain` with observations from the prior
/// generative process. Deterministic in `seed`.
pub fn generate_dataset(n: usize, domain: (f64, f64), seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(domain.0 < domain.1) {
        return Err(Error::InvalidArgument(format!("empty domain [{}, {}]", domain.0, domain.1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(domain.0..domain.1)).collect();
    let prior = GpModel::new(Vec::new(), Vec::new());
    let ys = sample_observations(&prior, &xs, &mut rng)?;
    Ok((xs, ys))
}

/// Factorized `K + diag(σ²(x_i))`.
#[derive(Debug, Clone)]
pub struct GpState {
    model: GpModel,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    /// Diagonal jitter that was needed (0 if none).
    pub jitter: f64,
}

/// Tries no jitter first, then `1e-8`, escalating ×10 at most three times.
pub fn gp_fit(model: &GpModel) -> Result<GpState> {
    if !(model.lengthscale > 0.0) || !(model.signal_variance > 0.0) {
        return Err(Error::InvalidArgument("GP lengthscale and signal variance must be positive".into()));
    }
    if model.train_x.len() != model.train_y.len() {
        return Err(Error::Dimension("GP training inputs and targets differ in length".into()));
    }
    let n = model.train_x.len();
    if n == 0 {
        return Ok(GpState { model: model.clone(), chol: None, alpha: DVector::zeros(0), jitter: 0.0 });
    }
    let mut k = model.gram(&model.train_x);
    for (i, &x) in model.train_x.iter().enumerate() {
        k[(i, i)] += model.noise.variance(x);
    }
    let (chol, jitter) = cholesky_with_shifts(&k, [0.0, 1e-8, 1e-7, 1e-6, 1e-5])
        .ok_or_else(|| Error::numerical(MODULE, "training covariance not positive definite after jitter 1e-5"))?;
    let alpha = chol.solve(&DVector::from_column_slice(&model.train_y));
    Ok(GpState { model: model.clone(), chol: Some(chol), alpha, jitter })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpPrediction {
    pub x: f64,
    pub mean: f64,
    /// Epistemic part.
    pub posterior_variance: f64,
    /// Aleatoric part, `σ²(x)`.
    pub likelihood_variance: f64,
}

impl GpState {
    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn predict(&self, x: f64) -> Result<GpPrediction> {
        let prior_var = self.model.signal_variance;
        let likelihood_variance = self.model.noise.variance(x);
        let Some(chol) = &self.chol else {
            return Ok(GpPrediction { x, mean: 0.0, posterior_variance: prior_var, likelihood_variance });
        };
        let k_star = DVector::from_iterator(
            self.model.train_x.len(),
            self.model.train_x.iter().map(|&xi| self.model.kernel(x, xi)),
        );
        let mean = k_star.dot(&self.alpha);
        let v = chol.l().solve_lower_triangular(&k_star).ok_or_else(|| {
            Error::numerical(MODULE, "singular Cholesky factor")
        })?;
        let mut var = prior_var - v.dot(&v);
        if var < 0.0 {
            if var < -1e-9 {
                return Err(Error::numerical(MODULE, format!("negative posterior variance {var:e} at x = {x}")));
            }
            var = 0.0;
        }
        Ok(GpPrediction { x, mean, posterior_variance: var, likelihood_variance })
    }

    pub fn predict_many(&self, xs: &[f64]) -> Result<Vec<GpPrediction>> {
        xs.iter().map(|&x| self.predict(x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceBin {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_posterior_variance: f64,
}

/// Mean posterior variance per likelihood-variance bin, separately for
/// InD (`x >= 0`) and OOD (`x < 0`) predictions. Only populated bins are
/// listed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalVariance {
    pub n_bins: usize,
    pub range: (f64, f64),
    pub ind: Vec<VarianceBin>,
    pub ood: Vec<VarianceBin>,
}

impl ConditionalVariance {
    /// Bins populated in both splits, as `(ind, ood)` pairs.
    pub fn shared_bins(&self) -> Vec<(VarianceBin, VarianceBin)> {
        self.ind
            .iter()
            .filter_map(|i| self.ood.iter().find(|o| o.bin == i.bin).map(|o| (*i, *o)))
            .collect()
    }
}

pub fn conditional_posterior_variance(predictions: &[GpPrediction], n_bins: usize) -> Result<ConditionalVariance> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let (lo, hi) = LIKELIHOOD_VARIANCE_RANGE;
    let width = (hi - lo) / n_bins as f64;
    let table = |keep: &dyn Fn(f64) -> bool| {
        let mut sums = vec![(0usize, 0.0f64); n_bins];
        for p in predictions.iter().filter(|p| keep(p.x)) {
            let b = (((p.likelihood_variance - lo) / width).floor().max(0.0) as usize).min(n_bins - 1);
            sums[b].0 += 1;
            sums[b].1 += p.posterior_variance;
        }
        sums.iter()
            .enumerate()
            .filter(|(_, s)| s.0 > 0)
            .map(|(b, &(count, total))| VarianceBin {
                bin: b,
                lo: lo + b as f64 * width,
                hi: lo + (b + 1) as f64 * width,
                count,
                mean_posterior_variance: total / count as f64,
            })
            .collect::<Vec<_>>()
    };
    Ok(ConditionalVariance {
        n_bins,
        range: (lo, hi),
        ind: table(&|x| x >= 0.0),
        ood: table(&|x| x < 0.0),
    })
}

/// Output of the default reference experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpExperiment {
    pub seed: u64,
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub predictions: Vec<GpPrediction>,
    pub conditional: ConditionalVariance,
}

impl GpExperiment {
    pub fn mean_posterior_variance(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let sel: Vec<f64> =
            self.predictions.iter().filter(|p| keep(p.x)).map(|p| p.posterior_variance).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }
}

/// 25 training points on `[0, 5]`, predictions at 512 points on `[-5, 5]`,
/// 20 likelihood-variance bins.
pub fn default_experiment(seed: u64, n_bins: usize) -> Result<GpExperiment> {
    let (train_x, train_y) = generate_dataset(DEFAULT_TRAIN_POINTS, TRAIN_DOMAIN, seed)?;
    let state = gp_fit(&GpModel::new(train_x.clone(), train_y.clone()))?;
    let predictions = state.predict_many(&linspace(EVAL_DOMAIN.0, EVAL_DOMAIN.1, EVAL_POINTS))?;
    let conditional = conditional_posterior_variance(&predictions, n_bins)?;
    Ok(GpExperiment { seed, train_x, train_y, predictions, conditional })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empty_dataset_and_prior_prediction() {
        let (x, y) = generate_dataset(0, TRAIN_DOMAIN, 1).unwrap();
        assert!(x.is_empty() && y.is_empty());
        let state = gp_fit(&GpModel::new(x, y)).unwrap();
        let p = state.predict(1.3).unwrap();
        assert_eq!((p.mean, p.posterior_variance), (0.0, 1.0));
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        assert_eq!(generate_dataset(25, TRAIN_DOMAIN, 4).unwrap(), generate_dataset(25, TRAIN_DOMAIN, 4).unwrap());
        assert_ne!(generate_dataset(25, TRAIN_DOMAIN, 4).unwrap(), generate_dataset(25, TRAIN_DOMAIN, 5).unwrap());
        let (x, _) = generate_dataset(25, TRAIN_DOMAIN, 4).unwrap();
        assert!(x.iter().all(|v| (0.0..5.0).contains(v)));
    }

    #[test]
    fn single_point_closed_form() {
        let state = gp_fit(&GpModel::new(vec![0.0], vec![0.0])).unwrap();
        assert_eq!(state.jitter, 0.0);
        let p = state.predict(0.0).unwrap();
        assert_abs_diff_eq!(p.posterior_variance, 1.0 - 1.0 / 1.01, epsilon = 1e-9);
        assert_abs_diff_eq!(p.posterior_variance, 0.009901, epsilon = 1e-6);
        assert_abs_diff_eq!(p.likelihood_variance, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn far_points_revert_to_prior() {
        let (x, y) = generate_dataset(25, TRAIN_DOMAIN, 2).unwrap();
        let state = gp_fit(&GpModel::new(x, y)).unwrap();
        let p = state.predict(-20.0).unwrap();
        assert_abs_diff_eq!(p.posterior_variance, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.mean, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn duplicate_inputs_without_noise_need_jitter() {
        let model = GpModel {
            noise: NoiseModel::Constant(0.0),
            ..GpModel::new(vec![1.0, 1.0, 2.0], vec![0.3, 0.3, -0.1])
        };
        let state = gp_fit(&model).unwrap();
        assert!(state.jitter > 0.0);
        let p = state.predict(1.0).unwrap();
        assert!(p.posterior_variance >= 0.0 && p.posterior_variance < 1e-3);
        // the default heteroskedastic noise makes duplicates harmless
        let state = gp_fit(&GpModel::new(vec![1.0, 1.0], vec![0.2, 0.4])).unwrap();
        assert_eq!(state.jitter, 0.0);
    }

    #[test]
    fn posterior_variance_bounds() {
        let (x, y) = generate_dataset(25, TRAIN_DOMAIN, 3).unwrap();
        let model = GpModel::new(x.clone(), y);
        let state = gp_fit(&model).unwrap();
        for p in state.predict_many(&linspace(-6.0, 6.0, 200)).unwrap() {
            assert!(p.posterior_variance >= 0.0 && p.posterior_variance <= 1.0 + 1e-9);
        }
        for &xi in &x {
            let p = state.predict(xi).unwrap();
            assert!(p.posterior_variance <= model.noise.variance(xi) + 1e-12);
        }
    }

    #[test]
    fn posterior_variance_vanishes_with_noise() {
        let mut prev = f64::INFINITY;
        for noise in [1e-1, 1e-2, 1e-4, 1e-6] {
            let model = GpModel { noise: NoiseModel::Constant(noise), ..GpModel::new(vec![0.0, 2.0], vec![0.5, -0.5]) };
            let v = gp_fit(&model).unwrap().predict(0.0).unwrap().posterior_variance;
            assert!(v < prev && v <= noise);
            prev = v;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn kernel_matrix_is_psd() {
        for seed in 0..5 {
            let (x, _) = generate_dataset(12, TRAIN_DOMAIN, seed).unwrap();
            let k = GpModel::new(x.clone(), x).gram(&[0.1, 0.5, 0.55, 1.0, 3.0, 4.9]);
            let eig = k.symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn observation_variance_matches_prior_plus_noise() {
        // y at x = π has variance 1 + 0.01; at x = π/2 it is 1 + 1.01
        let prior = GpModel::new(Vec::new(), Vec::new());
        let xs = [std::f64::consts::PI, std::f64::consts::FRAC_PI_2];
        let draws: Vec<Vec<f64>> = (0..1000)
            .map(|s| sample_observations(&prior, &xs, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .collect();
        for (j, expected) in [1.01, 2.01].into_iter().enumerate() {
            let v: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (v.len() - 1) as f64;
            assert!((var / expected - 1.0).abs() < 0.1, "x = {}: var {var}", xs[j]);
        }
    }

    #[test]
    fn conditional_tables() {
        let same = vec![GpPrediction { x: 1.0, mean: 0.0, posterior_variance: 0.3, likelihood_variance: 0.5 }; 4];
        let mut mixed = same.clone();
        mixed.iter_mut().take(2).for_each(|p| p.x = -1.0);
        let t = conditional_posterior_variance(&mixed, 20).unwrap();
        assert_eq!(t.ind.len(), 1);
        assert_eq!(t.ind[0].mean_posterior_variance, t.ood[0].mean_posterior_variance);
        let t = conditional_posterior_variance(&same, 20).unwrap();
        assert!(t.ood.is_empty());
        assert_eq!(t.ind[0].count, 4);
    }
}
