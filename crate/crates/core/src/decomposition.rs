//! Ensemble diversity and the exact per-datapoint decompositions that tie it
//! to ensemble and member uncertainty or loss.
//!
//! Two additive families split the ensemble's uncertainty:
//!
//! ```text
//! U(mean f)  = Var[f]  + mean U(f)        (quadratic)
//! H(mean f)  = JSD[f]  + mean H(f)        (entropy)
//! ```
//!
//! and two Jensen-gap families split the member-average loss:
//!
//! ```text
//! mean Brier(f) = Brier(mean f) + Var[f]
//! mean NLL(f)   = NLL(mean f)   + KL(Uniform(M) || p*_i / sum p*)
//! ```
//!
//! Variances are population variances over members (divide by `M`). Every
//! constructor verifies its identity at each point and fails with a numerical
//! error if the residual exceeds [`IDENTITY_TOL`](crate::IDENTITY_TOL).

use serde::{Deserialize, Serialize};

use crate::data::{check_members, LabelVector, ProbMatrix};
use crate::error::{Error, Result};
use crate::metrics::{brier_row, entropy_row, quad_row};
use crate::{IDENTITY_TOL, LIKELIHOOD_EPS};

const MODULE: &str = "decomposition";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    QuadraticVariance,
    EntropyJsd,
    BrierGap,
    NllGap,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::QuadraticVariance => "quadratic_variance",
            Family::EntropyJsd => "entropy_jsd",
            Family::BrierGap => "brier_gap",
            Family::NllGap => "nll_gap",
        }
    }

    /// Whether `total = diversity + avg_member` (as opposed to
    /// `avg_member = total + diversity`).
    pub fn is_additive(self) -> bool {
        matches!(self, Family::QuadraticVariance | Family::EntropyJsd)
    }
}

/// Uncertainty measure used on the x-axis of conditional analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyFamily {
    Quadratic,
    Entropy,
}

impl UncertaintyFamily {
    pub fn decompose(self, members: &[&ProbMatrix]) -> Result<DecompositionRecord> {
        match self {
            UncertaintyFamily::Quadratic => decompose_quadratic(members),
            UncertaintyFamily::Entropy => decompose_entropy(members),
        }
    }

    /// Upper end of the per-point uncertainty range for `c` classes.
    pub fn max_value(self, c: usize) -> f64 {
        match self {
            UncertaintyFamily::Quadratic => 1.0 - 1.0 / c as f64,
            UncertaintyFamily::Entropy => (c as f64).ln(),
        }
    }
}

/// Per-datapoint decomposition. For the gap families `total` is the
/// ensemble's loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionRecord {
    pub family: Family,
    pub total: Vec<f64>,
    pub diversity: Vec<f64>,
    pub avg_member: Vec<f64>,
}

impl DecompositionRecord {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// Signed identity residual per point.
    pub fn residuals(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.residual(i)).collect()
    }

    pub fn residual(&self, i: usize) -> f64 {
        if self.family.is_additive() {
            self.total[i] - (self.diversity[i] + self.avg_member[i])
        } else {
            self.avg_member[i] - (self.total[i] + self.diversity[i])
        }
    }

    pub fn max_abs_residual(&self) -> f64 {
        (0..self.len()).map(|i| self.residual(i).abs()).fold(0.0, f64::max)
    }

    /// Dataset means of `(total, diversity, avg_member)`.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        (mean(&self.total), mean(&self.diversity), mean(&self.avg_member))
    }

    fn verified(self) -> Result<Self> {
        for i in 0..self.len() {
            let r = self.residual(i);
            if !(r.abs() < IDENTITY_TOL) {
                return Err(Error::numerical(
                    MODULE,
                    format!("{} identity violated at point {i}: residual {r:e}", self.family.name()),
                ));
            }
        }
        Ok(self)
    }
}

fn member_checks<'a>(members: &[&'a ProbMatrix]) -> Result<&'a ProbMatrix> {
    check_members(members, 2)
}

/// Mean of the members' rows at point `i`, written into `out`.
fn mean_row(members: &[&ProbMatrix], i: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for m in members {
        for (o, p) in out.iter_mut().zip(m.row(i)) {
            *o += p;
        }
    }
    let k = members.len() as f64;
    out.iter_mut().for_each(|v| *v /= k);
}

fn variance_at(members: &[&ProbMatrix], i: usize, mean: &[f64]) -> f64 {
    let k = members.len() as f64;
    members
        .iter()
        .map(|m| m.row(i).iter().zip(mean).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum::<f64>()
        / k
}

/// Sum over classes of the across-member variance of the class probability.
pub fn variance_diversity(members: &[&ProbMatrix]) -> Result<Vec<f64>> {
    let first = member_checks(members)?;
    let mut mean = vec![0.0; first.cols()];
    Ok((0..first.rows())
        .map(|i| {
            mean_row(members, i, &mut mean);
            variance_at(members, i, &mean)
        })
        .collect())
}

/// Jensen-Shannon divergence: entropy of the mean minus mean entropy.
pub fn jsd_diversity(members: &[&ProbMatrix]) -> Result<Vec<f64>> {
    Ok(decompose_entropy(members)?.diversity)
}

pub fn decompose_quadratic(members: &[&ProbMatrix]) -> Result<DecompositionRecord> {
    let first = member_checks(members)?;
    let n = first.rows();
    let k = members.len() as f64;
    let mut rec = DecompositionRecord {
        family: Family::QuadraticVariance,
        total: Vec::with_capacity(n),
        diversity: Vec::with_capacity(n),
        avg_member: Vec::with_capacity(n),
    };
    let mut mean = vec![0.0; first.cols()];
    for i in 0..n {
        mean_row(members, i, &mut mean);
        rec.total.push(quad_row(&mean));
        rec.diversity.push(variance_at(members, i, &mean));
        rec.avg_member.push(members.iter().map(|m| quad_row(m.row(i))).sum::<f64>() / k);
    }
    rec.verified()
}

/// Entropy decomposition; the JSD is additionally cross-checked against the
/// mean KL divergence of each member from the ensemble.
pub fn decompose_entropy(members: &[&ProbMatrix]) -> Result<DecompositionRecord> {
    let first = member_checks(members)?;
    let n = first.rows();
    let k = members.len() as f64;
    let mut rec = DecompositionRecord {
        family: Family::EntropyJsd,
        total: Vec::with_capacity(n),
        diversity: Vec::with_capacity(n),
        avg_member: Vec::with_capacity(n),
    };
    let mut mean = vec![0.0; first.cols()];
    for i in 0..n {
        mean_row(members, i, &mut mean);
        let total = entropy_row(&mean);
        let avg = members.iter().map(|m| entropy_row(m.row(i))).sum::<f64>() / k;
        let jsd = total - avg;
        let mean_kl = members.iter().map(|m| kl(m.row(i), &mean)).sum::<f64>() / k;
        if !((jsd - mean_kl).abs() < IDENTITY_TOL) {
            return Err(Error::numerical(
                MODULE,
                format!("JSD forms disagree at point {i}: {jsd:e} vs mean KL {mean_kl:e}"),
            ));
        }
        rec.total.push(total);
        rec.diversity.push(jsd);
        rec.avg_member.push(avg);
    }
    rec.verified()
}

/// KL(p || q) with 0 ln 0 = 0. `q` must dominate `p`.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

fn check_labels(first: &ProbMatrix, labels: &LabelVector) -> Result<()> {
    if labels.len() != first.rows() || labels.n_classes() != first.cols() {
        return Err(Error::Dimension(format!(
            "labels ({} points, {} classes) do not match predictions ({}x{})",
            labels.len(),
            labels.n_classes(),
            first.rows(),
            first.cols()
        )));
    }
    Ok(())
}

/// Member-average Brier score minus ensemble Brier score, which equals the
/// variance diversity at every point.
pub fn brier_jensen_gap(members: &[&ProbMatrix], labels: &LabelVector) -> Result<DecompositionRecord> {
    let first = member_checks(members)?;
    check_labels(first, labels)?;
    let n = first.rows();
    let k = members.len() as f64;
    let mut rec = DecompositionRecord {
        family: Family::BrierGap,
        total: Vec::with_capacity(n),
        diversity: Vec::with_capacity(n),
        avg_member: Vec::with_capacity(n),
    };
    let mut mean = vec![0.0; first.cols()];
    for (i, &y) in labels.values().iter().enumerate() {
        mean_row(members, i, &mut mean);
        rec.total.push(brier_row(&mean, y));
        rec.diversity.push(variance_at(members, i, &mean));
        rec.avg_member.push(members.iter().map(|m| brier_row(m.row(i), y)).sum::<f64>() / k);
    }
    rec.verified()
}

/// Member-average NLL minus ensemble NLL, which equals the KL divergence from
/// the uniform distribution over members to the members' normalized
/// true-class likelihoods.
///
/// Member likelihoods are clamped below at [`LIKELIHOOD_EPS`] and the
/// ensemble likelihood is the mean of the clamped values, so the identity
/// stays exact on inputs containing zeros.
pub fn nll_jensen_gap(members: &[&ProbMatrix], labels: &LabelVector) -> Result<DecompositionRecord> {
    let first = member_checks(members)?;
    check_labels(first, labels)?;
    let n = first.rows();
    let k = members.len() as f64;
    let mut rec = DecompositionRecord {
        family: Family::NllGap,
        total: Vec::with_capacity(n),
        diversity: Vec::with_capacity(n),
        avg_member: Vec::with_capacity(n),
    };
    let mut lik = vec![0.0; members.len()];
    for (i, &y) in labels.values().iter().enumerate() {
        for (l, m) in lik.iter_mut().zip(members) {
            *l = m.row(i)[y].max(LIKELIHOOD_EPS);
        }
        let sum: f64 = lik.iter().sum();
        let ens = sum / k;
        rec.total.push(-ens.ln());
        rec.avg_member.push(lik.iter().map(|l| -l.ln()).sum::<f64>() / k);
        // KL(P || Q) with P uniform over members and Q_i = lik_i / sum
        let uniform = 1.0 / k;
        rec.diversity.push(lik.iter().map(|l| uniform * (uniform / (l / sum)).ln()).sum());
    }
    rec.verified()
}

/// Fixed-range histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Self {
        Self { lo, hi, counts: vec![0; cells] }
    }

    /// Values outside `[lo, hi]` are clamped into the edge cells.
    pub fn add(&mut self, v: f64) {
        let cells = self.counts.len();
        let t = if self.hi > self.lo { (v - self.lo) / (self.hi - self.lo) } else { 0.0 };
        let idx = ((t * cells as f64).floor().max(0.0) as usize).min(cells - 1);
        self.counts[idx] += 1;
    }

    pub fn cell_center(&self, idx: usize) -> f64 {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        self.lo + (idx as f64 + 0.5) * w
    }
}

pub const MARGINAL_CELLS: usize = 100;

/// Distribution of average member uncertainty over the points of a dataset,
/// on 100 equal cells spanning the family's range.
pub fn marginal_avg_uncertainty(members: &[&ProbMatrix], family: UncertaintyFamily) -> Result<Histogram> {
    let rec = family.decompose(members)?;
    let mut hist = Histogram::new(0.0, family.max_value(members[0].cols()), MARGINAL_CELLS);
    rec.avg_member.iter().for_each(|&v| hist.add(v));
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pm(rows: &[&[f64]]) -> ProbMatrix {
        ProbMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn variance_examples() {
        let a = pm(&[&[1.0, 0.0], &[0.7, 0.3]]);
        let b = pm(&[&[0.0, 1.0], &[0.5, 0.5]]);
        let v = variance_diversity(&[&a, &b]).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.02, epsilon = 1e-15);
        assert!(variance_diversity(&[&a, &a, &a]).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(variance_diversity(&[&a]).is_err());
    }

    #[test]
    fn jsd_examples() {
        let a = pm(&[&[1.0, 0.0], &[0.9, 0.1]]);
        let b = pm(&[&[0.0, 1.0], &[0.5, 0.5]]);
        let j = jsd_diversity(&[&a, &b]).unwrap();
        assert_abs_diff_eq!(j[0], 2f64.ln(), epsilon = 1e-15);
        // H(0.7, 0.3) - [H(0.9, 0.1) + H(0.5, 0.5)] / 2
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let expected = h(0.7) - (h(0.9) + h(0.5)) / 2.0;
        assert_abs_diff_eq!(j[1], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(j[1], 0.101749, epsilon = 1e-6);
        assert!(jsd_diversity(&[&a, &a]).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_one_hot_members() {
        let a = pm(&[&[1.0, 0.0]]);
        let b = pm(&[&[0.0, 1.0]]);
        let q = decompose_quadratic(&[&a, &b]).unwrap();
        assert_eq!((q.total[0], q.diversity[0], q.avg_member[0]), (0.5, 0.5, 0.0));
        let e = decompose_entropy(&[&a, &b]).unwrap();
        assert_abs_diff_eq!(e.total[0], 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.diversity[0], 2f64.ln(), epsilon = 1e-15);
        assert_eq!(e.avg_member[0], 0.0);

        let y = LabelVector::new(vec![0], 2).unwrap();
        let g = brier_jensen_gap(&[&a, &b], &y).unwrap();
        assert_eq!(g.avg_member[0], 1.0);
        assert_eq!(g.total[0], 0.5);
        assert_eq!(g.diversity[0], 0.5);
    }

    #[test]
    fn nll_gap_closed_form() {
        let a = pm(&[&[0.8, 0.2]]);
        let b = pm(&[&[0.2, 0.8]]);
        let y = LabelVector::new(vec![0], 2).unwrap();
        let g = nll_jensen_gap(&[&a, &b], &y).unwrap();
        assert_abs_diff_eq!(g.total[0], 2f64.ln(), epsilon = 1e-15);
        let mean_nll = -(0.8f64.ln() + 0.2f64.ln()) / 2.0;
        assert_abs_diff_eq!(g.avg_member[0], mean_nll, epsilon = 1e-15);
        assert_abs_diff_eq!(g.avg_member[0], 0.91629, epsilon = 1e-5);
        // KL(Unif || (0.8, 0.2))
        let kl = 0.5 * (0.5f64 / 0.8).ln() + 0.5 * (0.5f64 / 0.2).ln();
        assert_abs_diff_eq!(g.diversity[0], kl, epsilon = 1e-15);
        assert_abs_diff_eq!(g.diversity[0], 0.22314, epsilon = 1e-5);
    }

    #[test]
    fn nll_gap_equal_likelihoods() {
        let a = pm(&[&[0.3, 0.7, 0.0]]);
        let b = pm(&[&[0.3, 0.1, 0.6]]);
        let y = LabelVector::new(vec![0], 3).unwrap();
        let g = nll_jensen_gap(&[&a, &b], &y).unwrap();
        assert_abs_diff_eq!(g.diversity[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn nll_gap_with_zero_likelihood_keeps_identity() {
        let a = pm(&[&[1.0, 0.0]]);
        let b = pm(&[&[0.0, 1.0]]);
        let y = LabelVector::new(vec![1], 2).unwrap();
        let g = nll_jensen_gap(&[&a, &b], &y).unwrap();
        assert!(g.max_abs_residual() < IDENTITY_TOL);
        assert!(g.diversity[0] > 0.0);
    }

    #[test]
    fn marginal_histograms() {
        let onehot = pm(&[&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0][..]; 5]);
        let uniform = pm(&[&[0.1; 10][..]; 5]);
        let h = marginal_avg_uncertainty(&[&onehot, &onehot], UncertaintyFamily::Quadratic).unwrap();
        assert_eq!(h.counts[0], 5);
        let h = marginal_avg_uncertainty(&[&uniform, &uniform], UncertaintyFamily::Quadratic).unwrap();
        assert_eq!(h.counts[MARGINAL_CELLS - 1], 5);
        assert_abs_diff_eq!(h.hi, 0.9, epsilon = 1e-15);

        let mut rows = vec![vec![0.1; 10]; 3];
        rows.extend(vec![[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0].to_vec(); 7]);
        let mixed = ProbMatrix::from_rows(&rows).unwrap();
        let h = marginal_avg_uncertainty(&[&mixed, &mixed], UncertaintyFamily::Quadratic).unwrap();
        assert_eq!((h.counts[0], h.counts[MARGINAL_CELLS - 1]), (7, 3));
        assert_eq!(h.counts.iter().sum::<usize>(), 10);
    }
}
