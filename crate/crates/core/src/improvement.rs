//! Per-datapoint improvement comparisons and the unbiased MMD two-sample test.
//!
//! An improvement vector holds `metric(base) - metric(alt)` per point, so
//! positive entries are points the alternative model does better on. Two
//! improvement vectors over the same points form a 2-D point cloud; the MMD
//! test asks whether two such clouds come from the same distribution.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{LabelVector, ProbMatrix};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;

const MODULE: &str = "improvement_analysis";

/// Per-side sample size above which the quadratic-time statistic warns.
pub const MMD_SIZE_WARNING: usize = 20_000;
/// Points used to estimate the median-heuristic bandwidth.
pub const MEDIAN_HEURISTIC_POINTS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementPair {
    pub base_model_id: String,
    pub alt_id: String,
    pub delta: Vec<f64>,
    pub metric: MetricKind,
}

pub fn per_point_improvement(
    base_id: &str,
    base: &ProbMatrix,
    alt_id: &str,
    alt: &ProbMatrix,
    labels: &LabelVector,
    metric: MetricKind,
) -> Result<ImprovementPair> {
    let b = metric.evaluate(base, labels)?;
    let a = metric.evaluate(alt, labels)?;
    if a.values.len() != b.values.len() {
        return Err(Error::Dimension("base and alternative cover different points".into()));
    }
    let delta: Vec<f64> = b.values.iter().zip(&a.values).map(|(x, y)| x - y).collect();
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::degenerate(MODULE, "non-finite improvement"));
    }
    Ok(ImprovementPair { base_model_id: base_id.to_owned(), alt_id: alt_id.to_owned(), delta, metric })
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::degenerate(MODULE, "correlation needs at least 2 points"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::degenerate(MODULE, "zero variance; correlation undefined"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn sq_dist(u: &[f64; 2], v: &[f64; 2]) -> f64 {
    let (a, b) = (u[0] - v[0], u[1] - v[1]);
    a * a + b * b
}

/// Sum of `k(row_i, col_j)` over all `i`, `j` (skipping `i == j` when
/// `skip_diagonal`). Rows are summed in parallel and combined in index
/// order, so the result does not depend on the thread count.
fn kernel_sum(rows: &[[f64; 2]], cols: &[[f64; 2]], inv2s2: f64, skip_diagonal: bool) -> f64 {
    let per_row: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            cols.iter()
                .enumerate()
                .filter(|&(j, _)| !(skip_diagonal && i == j))
                .map(|(_, v)| (-sq_dist(u, v) * inv2s2).exp())
                .sum::<f64>()
        })
        .collect();
    per_row.iter().sum()
}

/// Unbiased squared MMD with Gaussian kernel `exp(-|u-v|² / (2σ²))`.
/// Can be slightly negative when both samples share a distribution.
pub fn mmd2_unbiased(x: &[[f64; 2]], y: &[[f64; 2]], bandwidth: f64) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::degenerate(MODULE, "MMD needs at least 2 points per sample"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("MMD bandwidth must be positive, got {bandwidth}")));
    }
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let (mf, nf) = (m as f64, n as f64);
    let kxx = kernel_sum(x, x, inv, true) / (mf * (mf - 1.0));
    let kyy = kernel_sum(y, y, inv, true) / (nf * (nf - 1.0));
    let kxy = kernel_sum(x, y, inv, false) / (mf * nf);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Rejection threshold for `MMD_u²` at level `alpha` with equal sample sizes
/// `m` and kernel bound `K`: `(4K / sqrt(m)) · sqrt(ln(1/alpha))`.
pub fn mmd_threshold(m: usize, alpha: f64, kernel_bound: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("MMD threshold needs m >= 1".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1], got {alpha}")));
    }
    Ok(4.0 * kernel_bound / (m as f64).sqrt() * (1.0 / alpha).ln().sqrt())
}

/// Median pairwise Euclidean distance over the pooled sample, estimated on at
/// most [`MEDIAN_HEURISTIC_POINTS`] points taken at a fixed stride.
pub fn median_heuristic(x: &[[f64; 2]], y: &[[f64; 2]]) -> Result<f64> {
    let pooled: Vec<[f64; 2]> = x.iter().chain(y).copied().collect();
    let stride = pooled.len().div_ceil(MEDIAN_HEURISTIC_POINTS).max(1);
    let pts: Vec<[f64; 2]> = pooled.iter().step_by(stride).copied().collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(&pts[i], &pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return Err(Error::degenerate(MODULE, "median heuristic needs at least 2 points"));
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if !(med > 0.0) {
        return Err(Error::degenerate(MODULE, "median pairwise distance is zero"));
    }
    Ok(med)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmdTestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub m: usize,
    pub bandwidth: f64,
    pub reject: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MmdTestResult {
    fn new(statistic: f64, m: usize, alpha: f64, bandwidth: f64) -> Result<Self> {
        let threshold = mmd_threshold(m, alpha, 1.0)?;
        let warning = (m > MMD_SIZE_WARNING)
            .then(|| format!("{m} points per side; quadratic-time statistic will be slow"));
        Ok(Self { statistic, threshold, alpha, m, bandwidth, reject: statistic > threshold, warning })
    }
}

/// `statistic (threshold)`, e.g. `2.2e-3 (0.069)`.
impl fmt::Display for MmdTestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1e} ({:.3})", self.statistic, self.threshold)
    }
}

fn cloud(a: &[f64], b: &[f64]) -> Vec<[f64; 2]> {
    a.iter().zip(b).map(|(&x, &y)| [x, y]).collect()
}

/// Compares the cloud `{(delta_a_i, delta_b_i)}` with
/// `{(delta_a_i, control_i)}` using `MMD_u²` with a median-heuristic
/// bandwidth and the large-deviation threshold of Gretton et al. (2012)
/// with `K = 1`.
pub fn improvement_similarity_test(
    delta_a: &ImprovementPair,
    delta_b: &ImprovementPair,
    control: &ImprovementPair,
    alpha: f64,
) -> Result<MmdTestResult> {
    let m = delta_a.delta.len();
    if delta_b.delta.len() != m || control.delta.len() != m {
        return Err(Error::Dimension("improvement vectors cover different numbers of points".into()));
    }
    let x = cloud(&delta_a.delta, &delta_b.delta);
    let y = cloud(&delta_a.delta, &control.delta);
    let bandwidth = median_heuristic(&x, &y)?;
    MmdTestResult::new(mmd2_unbiased(&x, &y, bandwidth)?, m, alpha, bandwidth)
}

/// Two-sample MMD test of arbitrary equal-size clouds with a
/// median-heuristic bandwidth.
pub fn mmd_test(x: &[[f64; 2]], y: &[[f64; 2]], alpha: f64) -> Result<MmdTestResult> {
    if x.len() != y.len() {
        return Err(Error::Dimension("threshold assumes equal sample sizes".into()));
    }
    let bandwidth = median_heuristic(x, y)?;
    MmdTestResult::new(mmd2_unbiased(x, y, bandwidth)?, x.len(), alpha, bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_cloud(m: usize, seed: u64, shift: f64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..m).map(|_| [n.sample(&mut rng) + shift, n.sample(&mut rng)]).collect()
    }

    /// Direct double loop, written independently of `kernel_sum`.
    fn mmd_oracle(x: &[[f64; 2]], y: &[[f64; 2]], s: f64) -> f64 {
        let k = |u: [f64; 2], v: [f64; 2]| (-((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)) / (2.0 * s * s)).exp();
        let (m, n) = (x.len() as f64, y.len() as f64);
        let mut a = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                if i != j {
                    a += k(x[i], x[j]);
                }
            }
        }
        let mut b = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if i != j {
                    b += k(y[i], y[j]);
                }
            }
        }
        let mut c = 0.0;
        for u in x {
            for v in y {
                c += k(*u, *v);
            }
        }
        a / (m * (m - 1.0)) + b / (n * (n - 1.0)) - 2.0 * c / (m * n)
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson_r(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -2.0 * v + 3.0).collect();
        assert_abs_diff_eq!(pearson_r(&a, &neg).unwrap(), -1.0, epsilon = 1e-15);
        // 5.5 / sqrt(5 * 8.75)
        assert_abs_diff_eq!(pearson_r(&a, &[1.0, 3.0, 2.0, 5.0]).unwrap(), 0.831_521_840_620_3, epsilon = 1e-12);
        assert!(pearson_r(&a, &[1.0; 4]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let a = [0.3, -1.2, 2.5, 0.7, 1.1];
        let b = [1.0, 0.2, 2.2, -0.4, 0.9];
        let r = pearson_r(&a, &b).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| 3.0 * v + 7.0).collect();
        let b2: Vec<f64> = b.iter().map(|v| 0.5 * v - 2.0).collect();
        assert_abs_diff_eq!(pearson_r(&a2, &b2).unwrap(), r, epsilon = 1e-12);
    }

    #[test]
    fn improvement_examples() {
        let uniform = ProbMatrix::from_rows(&vec![vec![0.1; 10]; 3]).unwrap();
        let mut rows = vec![vec![0.0; 10]; 3];
        rows.iter_mut().for_each(|r| r[2] = 1.0);
        let onehot = ProbMatrix::from_rows(&rows).unwrap();
        let y = LabelVector::new(vec![2, 2, 2], 10).unwrap();
        let imp = per_point_improvement("b", &uniform, "a", &onehot, &y, MetricKind::Brier).unwrap();
        for d in &imp.delta {
            assert_abs_diff_eq!(*d, 0.9, epsilon = 1e-15);
        }
        let same = per_point_improvement("b", &uniform, "b", &uniform, &y, MetricKind::Nll).unwrap();
        assert!(same.delta.iter().all(|&d| d == 0.0));

        let mut better = vec![vec![0.1; 10]; 3];
        better[1] = rows[1].clone();
        let partial = ProbMatrix::from_rows(&better).unwrap();
        let imp = per_point_improvement("b", &uniform, "a", &partial, &y, MetricKind::Brier).unwrap();
        assert_eq!(imp.delta[0], 0.0);
        assert_eq!(imp.delta[2], 0.0);
        assert!(imp.delta[1] > 0.0);
    }

    #[test]
    fn mmd_matches_oracle() {
        for (m, n, seed) in [(2, 2, 1), (10, 17, 2), (50, 50, 3), (31, 44, 4)] {
            let x = gaussian_cloud(m, seed, 0.0);
            let y = gaussian_cloud(n, seed + 100, 0.3);
            for s in [0.3, 1.0, 2.5] {
                let got = mmd2_unbiased(&x, &y, s).unwrap();
                assert_abs_diff_eq!(got, mmd_oracle(&x, &y, s), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mmd_symmetric_and_self_form() {
        let x = gaussian_cloud(30, 5, 0.0);
        let y = gaussian_cloud(25, 6, 1.0);
        assert_abs_diff_eq!(mmd2_unbiased(&x, &y, 1.0).unwrap(), mmd2_unbiased(&y, &x, 1.0).unwrap(), epsilon = 1e-14);
        // MMD_u²(X, X) = 2 Σ_{i≠j} k / (m(m-1)) - 2 Σ_{i,j} k / m²
        let m = x.len() as f64;
        let k = |u: &[f64; 2], v: &[f64; 2]| (-sq_dist(u, v) / 2.0).exp();
        let off: f64 = x.iter().enumerate().flat_map(|(i, u)| x.iter().enumerate().filter(move |(j, _)| *j != i).map(move |(_, v)| k(u, v))).sum();
        let expected = 2.0 * off / (m * (m - 1.0)) - 2.0 * (off + m) / (m * m);
        assert_abs_diff_eq!(mmd2_unbiased(&x, &x, 1.0).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn mmd_identical_degenerate_clouds() {
        let x = vec![[0.5, -0.2]; 8];
        assert_abs_diff_eq!(mmd2_unbiased(&x, &x, 1.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mmd_saturates_under_large_shift() {
        let x: Vec<[f64; 2]> = gaussian_cloud(60, 7, 0.0).iter().map(|p| [0.05 * p[0], 0.05 * p[1]]).collect();
        let y: Vec<[f64; 2]> = x.iter().map(|p| [p[0] + 10.0, p[1]]).collect();
        let s = mmd2_unbiased(&x, &y, 1.0).unwrap();
        assert!(s > 1.9 && s <= 2.0, "{s}");
        assert!(s > mmd_threshold(60, 0.05, 1.0).unwrap());
    }

    #[test]
    fn threshold_values() {
        assert_abs_diff_eq!(mmd_threshold(10_000, 0.05, 1.0).unwrap(), 0.069, epsilon = 1e-3);
        assert_abs_diff_eq!(mmd_threshold(90_000, 0.05, 1.0).unwrap(), 0.0231, epsilon = 1e-4);
        assert_eq!(mmd_threshold(100, 1.0, 1.0).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for m in [10, 100, 1000, 10_000] {
            let t = mmd_threshold(m, 0.05, 1.0).unwrap();
            assert!(t < prev);
            prev = t;
        }
        assert!(mmd_threshold(100, 0.01, 1.0).unwrap() > mmd_threshold(100, 0.05, 1.0).unwrap());
    }

    #[test]
    fn null_trials_rarely_reject() {
        let rejections = (0..100)
            .filter(|&s| {
                let x = gaussian_cloud(100, 1000 + s, 0.0);
                let y = gaussian_cloud(100, 5000 + s, 0.0);
                mmd_test(&x, &y, 0.05).unwrap().reject
            })
            .count();
        assert!(rejections <= 7, "{rejections} rejections");
    }

    fn pair(delta: Vec<f64>) -> ImprovementPair {
        ImprovementPair { base_model_id: "b".into(), alt_id: "a".into(), delta, metric: MetricKind::Brier }
    }

    #[test]
    fn similarity_with_identical_control() {
        let c = gaussian_cloud(200, 8, 0.0);
        let a = pair(c.iter().map(|p| p[0]).collect());
        let b = pair(c.iter().map(|p| 0.8 * p[0] + 0.2 * p[1]).collect());
        let r = improvement_similarity_test(&a, &b, &b, 0.05).unwrap();
        assert!(r.statistic <= 0.0 && r.statistic.abs() <= 2.0 / 200.0, "{}", r.statistic);
        assert!(!r.reject);
    }

    #[test]
    fn similarity_rejects_shifted_control() {
        let c = gaussian_cloud(200, 9, 0.0);
        let a = pair(c.iter().map(|p| p[0]).collect());
        let b = pair(c.iter().map(|p| p[1]).collect());
        // b has unit spread; shift the control by 5 of it
        let control = pair(b.delta.iter().map(|v| v + 5.0).collect());
        let r = improvement_similarity_test(&a, &b, &control, 0.05).unwrap();
        assert!(r.reject, "{r}");
    }

    #[test]
    fn display_format() {
        let r = MmdTestResult::new(2.2e-3, 10_000, 0.05, 1.0).unwrap();
        assert_eq!(r.to_string(), "2.2e-3 (0.069)");
    }
}
