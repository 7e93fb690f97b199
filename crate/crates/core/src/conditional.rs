//! Conditional diversity: how ensemble diversity depends on average member
//! uncertainty, and whether that dependence differs between InD and OOD data.
//!
//! The pipeline is
//!
//! 1. per-point `(avg member uncertainty, diversity)` pairs ([`joint_samples`]),
//! 2. a product-Gaussian KDE of the joint density with Scott's-rule
//!    bandwidths, column-normalized into a conditional density
//!    ([`kde_joint`], [`conditional_grid`]),
//! 3. a kernel ridge regression estimate of `E[diversity | avg]`
//!    ([`krr_conditional_expectation`]),
//! 4. the relative change in area under the OOD curve versus the InD curve
//!    ([`d_statistic`]) and its Monte Carlo permutation p-value
//!    ([`permutation_test`]).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ProbMatrix;
use crate::decomposition::UncertaintyFamily;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_shifts, linspace, population_var, quantile_sorted, sample_std};

const MODULE: &str = "conditional_diversity";

/// Number of points on the KRR evaluation grid.
pub const DEFAULT_GRID_POINTS: usize = 100;
/// Pooled-sample quantiles bounding the evaluation grid.
pub const GRID_QUANTILES: (f64, f64) = (0.01, 0.99);
/// Default ridge: `1e-3` times the variance of the standardized targets.
pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const DEFAULT_SURROGATES: usize = 100;
/// Subsample cap applied when emitting plots.
pub const PLOT_SUBSAMPLE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    InD,
    OOD,
}

/// Per-point (average member uncertainty, diversity) pairs for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointSample {
    pub avg: Vec<f64>,
    pub div: Vec<f64>,
    pub source: Source,
}

impl JointSample {
    pub fn new(avg: Vec<f64>, div: Vec<f64>, source: Source) -> Result<Self> {
        if avg.len() != div.len() {
            return Err(Error::Dimension(format!(
                "joint sample has {} x-values and {} y-values",
                avg.len(),
                div.len()
            )));
        }
        if avg.iter().chain(&div).any(|v| !v.is_finite()) {
            return Err(Error::degenerate(MODULE, "non-finite joint sample value"));
        }
        if let Some(d) = div.iter().find(|&&d| d < -1e-12) {
            return Err(Error::degenerate(MODULE, format!("negative diversity {d:e}")));
        }
        Ok(Self { avg, div, source })
    }

    pub fn len(&self) -> usize {
        self.avg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avg.is_empty()
    }

    /// Random subset of at most `cap` points (order preserved).
    pub fn subsample(&self, cap: usize, seed: u64) -> Self {
        if self.len() <= cap {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), cap).into_vec();
        idx.sort_unstable();
        Self {
            avg: idx.iter().map(|&i| self.avg[i]).collect(),
            div: idx.iter().map(|&i| self.div[i]).collect(),
            source: self.source,
        }
    }

    /// Copy with every diversity value shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            avg: self.avg.clone(),
            div: self.div.iter().map(|d| d + delta).collect(),
            source: self.source,
        }
    }
}

pub fn joint_samples(
    members: &[&ProbMatrix],
    family: UncertaintyFamily,
    source: Source,
) -> Result<JointSample> {
    let rec = family.decompose(members)?;
    JointSample::new(rec.avg_member, rec.diversity, source)
}

fn scott_factor(n: usize) -> f64 {
    // d = 2 dimensions: n^(-1/(d+4))
    (n as f64).powf(-1.0 / 6.0)
}

fn scott_1d(values: &[f64], n_total: usize, what: &str) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::degenerate(MODULE, "Scott bandwidth needs at least 2 points"));
    }
    let std = sample_std(values);
    if !(std > 0.0) {
        return Err(Error::degenerate(MODULE, format!("zero spread in {what}; bandwidth undefined")));
    }
    Ok(scott_factor(n_total) * std)
}

/// Scott's-rule bandwidths `(hx, hy)` for the 2-D joint sample.
pub fn scott_bandwidth(sample: &JointSample) -> Result<(f64, f64)> {
    let n = sample.len();
    Ok((scott_1d(&sample.avg, n, "average uncertainty")?, scott_1d(&sample.div, n, "diversity")?))
}

/// Joint-density grid indexed `density[ix * y_grid.len() + iy]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeGrid {
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: (f64, f64),
    /// Columns whose mass was too small to normalize (set to zero).
    pub zero_columns: Vec<usize>,
}

impl KdeGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.density[ix * self.y_grid.len() + iy]
    }

    pub fn column(&self, ix: usize) -> &[f64] {
        let g = self.y_grid.len();
        &self.density[ix * g..(ix + 1) * g]
    }
}

fn gaussian_pdf(u: f64, h: f64) -> f64 {
    (-0.5 * (u / h) * (u / h)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
}

/// Grid spanning the sample range padded by `pad` bandwidths on each side.
pub fn padded_grid(values: &[f64], h: f64, pad: f64, points: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    linspace(lo - pad * h, hi + pad * h, points)
}

/// Product-Gaussian kernel density estimate on a rectangular grid.
pub fn kde_joint(sample: &JointSample, x_grid: &[f64], y_grid: &[f64], bandwidth: (f64, f64)) -> Result<KdeGrid> {
    let (hx, hy) = bandwidth;
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::degenerate(MODULE, "KDE bandwidths must be positive"));
    }
    if sample.is_empty() {
        return Err(Error::degenerate(MODULE, "KDE of an empty sample"));
    }
    let (gx, gy) = (x_grid.len(), y_grid.len());
    let mut density = vec![0.0; gx * gy];
    let mut ky = vec![0.0; gy];
    for (&xi, &yi) in sample.avg.iter().zip(&sample.div) {
        for (k, &y) in ky.iter_mut().zip(y_grid) {
            *k = gaussian_pdf(y - yi, hy);
        }
        for (ix, &x) in x_grid.iter().enumerate() {
            let kx = gaussian_pdf(x - xi, hx);
            if kx == 0.0 {
                continue;
            }
            for (d, k) in density[ix * gy..(ix + 1) * gy].iter_mut().zip(&ky) {
                *d += kx * k;
            }
        }
    }
    let n = sample.len() as f64;
    density.iter_mut().for_each(|d| *d /= n);
    Ok(KdeGrid {
        x_grid: x_grid.to_vec(),
        y_grid: y_grid.to_vec(),
        density,
        bandwidth,
        zero_columns: Vec::new(),
    })
}

/// Rescales each x-column to unit sum, approximating `p(div | avg)`.
pub fn conditional_grid(grid: &KdeGrid) -> KdeGrid {
    let gy = grid.y_grid.len();
    let mut out = grid.clone();
    out.zero_columns.clear();
    for ix in 0..grid.x_grid.len() {
        let col = &mut out.density[ix * gy..(ix + 1) * gy];
        let total: f64 = col.iter().sum();
        if total < 1e-12 {
            col.iter_mut().for_each(|v| *v = 0.0);
            out.zero_columns.push(ix);
        } else {
            col.iter_mut().for_each(|v| *v /= total);
        }
    }
    out
}

/// Estimate of `E[diversity | avg]` on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalCurve {
    pub x_grid: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub bandwidth: f64,
    /// Ridge actually used (after any escalation).
    pub ridge: f64,
}

/// Kernel ridge regression of `div` on `avg` with a Gaussian kernel.
///
/// Solves `(K + ridge·n·I) α = y` by Cholesky; on failure the ridge is
/// multiplied by 10, at most three times.
pub fn krr_conditional_expectation(
    sample: &JointSample,
    bandwidth: f64,
    ridge: f64,
    x_eval: &[f64],
) -> Result<ConditionalCurve> {
    krr_fit(&sample.avg, &sample.div, bandwidth, ridge, x_eval)
}

pub(crate) fn krr_fit(x: &[f64], y: &[f64], bandwidth: f64, ridge: f64, x_eval: &[f64]) -> Result<ConditionalCurve> {
    let n = x.len();
    if n < 2 {
        return Err(Error::degenerate(MODULE, "kernel ridge regression needs at least 2 points"));
    }
    if !(bandwidth > 0.0) || !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel ridge regression needs bandwidth > 0 and ridge >= 0 (got {bandwidth}, {ridge})"
        )));
    }
    let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = 1.0;
        for i in j + 1..n {
            let d = x[i] - x[j];
            let v = (-d * d * inv2h2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let first = if ridge > 0.0 { ridge } else { 0.0 };
    let base = if ridge > 0.0 { ridge } else { 1e-12 };
    let schedule = [first, base * 10.0, base * 100.0, base * 1000.0];
    let nf = n as f64;
    let (chol, shift) = cholesky_with_shifts(&k, schedule.iter().map(|r| r * nf)).ok_or_else(|| {
        Error::numerical(MODULE, format!("kernel matrix not positive definite even with ridge {}", base * 1000.0))
    })?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::numerical(MODULE, "non-finite kernel ridge coefficients"));
    }
    let y_hat = x_eval
        .iter()
        .map(|&xs| {
            x.iter()
                .zip(alpha.iter())
                .map(|(&xi, &a)| {
                    let d = xs - xi;
                    a * (-d * d * inv2h2).exp()
                })
                .sum()
        })
        .collect();
    Ok(ConditionalCurve { x_grid: x_eval.to_vec(), y_hat, bandwidth, ridge: shift / nf })
}

/// Evaluation grid shared by the InD and OOD curves: `points` equally spaced
/// values between the 1st and 99th percentile of the pooled x-values,
/// clipped to the overlap of the two samples' ranges.
pub fn evaluation_grid(ind_x: &[f64], ood_x: &[f64], points: usize) -> Result<Vec<f64>> {
    if ind_x.is_empty() || ood_x.is_empty() {
        return Err(Error::degenerate(MODULE, "evaluation grid needs two non-empty samples"));
    }
    let mut pooled: Vec<f64> = ind_x.iter().chain(ood_x).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let range = |v: &[f64]| {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    let (ilo, ihi) = range(ind_x);
    let (olo, ohi) = range(ood_x);
    let lo = quantile_sorted(&pooled, GRID_QUANTILES.0).max(ilo.max(olo));
    let hi = quantile_sorted(&pooled, GRID_QUANTILES.1).min(ihi.min(ohi));
    if !(lo < hi) {
        return Err(Error::degenerate(MODULE, "InD and OOD samples have non-overlapping supports"));
    }
    Ok(linspace(lo, hi, points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DMode {
    /// `Σ (ood - ind) / Σ ind` over the grid.
    #[default]
    RatioOfSums,
    /// Grid-averaged pointwise relative change, trapezoid rule.
    Integral,
}

/// Relative change in area under the OOD curve compared with the InD curve.
pub fn d_statistic(curve_ind: &ConditionalCurve, curve_ood: &ConditionalCurve, mode: DMode) -> Result<f64> {
    d_from_values(&curve_ind.x_grid, &curve_ind.y_hat, &curve_ood.x_grid, &curve_ood.y_hat, mode)
}

fn d_from_values(x_ind: &[f64], ind: &[f64], x_ood: &[f64], ood: &[f64], mode: DMode) -> Result<f64> {
    if x_ind != x_ood {
        return Err(Error::Dimension("d statistic needs curves on the same grid".into()));
    }
    if ind.is_empty() {
        return Err(Error::degenerate(MODULE, "empty curves"));
    }
    match mode {
        DMode::RatioOfSums => {
            let denom: f64 = ind.iter().sum();
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::degenerate(MODULE, "InD curve has zero area"));
            }
            Ok(ood.iter().zip(ind).map(|(o, i)| o - i).sum::<f64>() / denom)
        }
        DMode::Integral => {
            if ind.iter().any(|v| v.abs() < 1e-300) {
                return Err(Error::degenerate(MODULE, "InD curve vanishes on the grid"));
            }
            let rel: Vec<f64> = ood.iter().zip(ind).map(|(o, i)| (o - i) / i).collect();
            if rel.len() == 1 {
                return Ok(rel[0]);
            }
            let span = x_ind[x_ind.len() - 1] - x_ind[0];
            let area: f64 = x_ind
                .windows(2)
                .zip(rel.windows(2))
                .map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1]))
                .sum();
            Ok(area / span)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationConfig {
    pub n_surrogates: usize,
    pub seed: u64,
    /// KRR bandwidth; Scott's rule on the pooled x-values when `None`.
    pub bandwidth: Option<f64>,
    /// KRR ridge; [`DEFAULT_RIDGE`] when `None`.
    pub ridge: Option<f64>,
    pub grid_points: usize,
    pub d_mode: DMode,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            n_surrogates: DEFAULT_SURROGATES,
            seed: 0,
            bandwidth: None,
            ridge: None,
            grid_points: DEFAULT_GRID_POINTS,
            d_mode: DMode::RatioOfSums,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DStatResult {
    pub d: f64,
    /// `(#{surrogate d >= observed} + 1) / (n_surrogates + 1)`.
    pub p_value: f64,
    pub n_surrogates: usize,
    pub n_exceeding: usize,
    pub bandwidth: f64,
    pub ridge: f64,
    pub curve_ind: ConditionalCurve,
    pub curve_ood: ConditionalCurve,
}

struct Split<'a> {
    x: &'a [f64],
    y: &'a [f64],
}

fn split_d(ind: Split<'_>, ood: Split<'_>, h: f64, ridge: f64, cfg: &PermutationConfig) -> Result<(f64, ConditionalCurve, ConditionalCurve)> {
    let grid = evaluation_grid(ind.x, ood.x, cfg.grid_points)?;
    let ci = krr_fit(ind.x, ind.y, h, ridge, &grid)?;
    let co = krr_fit(ood.x, ood.y, h, ridge, &grid)?;
    let d = d_statistic(&ci, &co, cfg.d_mode)?;
    Ok((d, ci, co))
}

/// One-sided Monte Carlo permutation test of "OOD conditional diversity is
/// larger than InD".
///
/// Surrogates pool both samples, shuffle, and re-split into the original
/// sizes. Surrogate `s` draws from its own ChaCha stream `s + 1` of `seed`,
/// so the result does not depend on how many worker threads run.
pub fn permutation_test(ind: &JointSample, ood: &JointSample, cfg: &PermutationConfig) -> Result<DStatResult> {
    let n_ind = ind.len();
    let px: Vec<f64> = ind.avg.iter().chain(&ood.avg).copied().collect();
    let py: Vec<f64> = ind.div.iter().chain(&ood.div).copied().collect();
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => scott_1d(&px, px.len(), "average uncertainty")?,
    };
    let ridge = cfg.ridge.unwrap_or(DEFAULT_RIDGE);

    let (d, curve_ind, curve_ood) = split_d(
        Split { x: &ind.avg, y: &ind.div },
        Split { x: &ood.avg, y: &ood.div },
        h,
        ridge,
        cfg,
    )?;

    let surrogate = |s: usize| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64 + 1);
        let mut order: Vec<usize> = (0..px.len()).collect();
        order.shuffle(&mut rng);
        let sx: Vec<f64> = order.iter().map(|&i| px[i]).collect();
        let sy: Vec<f64> = order.iter().map(|&i| py[i]).collect();
        let (a, b) = (sx.split_at(n_ind), sy.split_at(n_ind));
        split_d(Split { x: a.0, y: b.0 }, Split { x: a.1, y: b.1 }, h, ridge, cfg).map(|r| r.0)
    };
    let surrogates: Vec<f64> = (0..cfg.n_surrogates)
        .into_par_iter()
        .map(surrogate)
        .collect::<Result<_>>()?;
    let n_exceeding = surrogates.iter().filter(|&&s| s >= d).count();
    Ok(DStatResult {
        d,
        p_value: (n_exceeding + 1) as f64 / (cfg.n_surrogates + 1) as f64,
        n_surrogates: cfg.n_surrogates,
        n_exceeding,
        bandwidth: h,
        ridge,
        curve_ind,
        curve_ood,
    })
}

/// Population standard deviation of the diversities of both samples.
pub fn pooled_diversity_std(a: &JointSample, b: &JointSample) -> f64 {
    let pooled: Vec<f64> = a.div.iter().chain(&b.div).copied().collect();
    population_var(&pooled).sqrt()
}
