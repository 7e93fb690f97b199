use nalgebra::{Cholesky, DMatrix, Dyn};

/// Cholesky factorization of `base + d·I`, trying each diagonal shift `d` of
/// `schedule` in order. Returns the factor and the shift that succeeded.
pub(crate) fn cholesky_with_shifts(
    base: &DMatrix<f64>,
    schedule: impl IntoIterator<Item = f64>,
) -> Option<(Cholesky<f64, Dyn>, f64)> {
    for shift in schedule {
        let mut m = base.clone();
        if shift != 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += shift;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Some((chol, shift));
        }
    }
    None
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divides by `n - 1`).
pub(crate) fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Population variance (divides by `n`).
pub(crate) fn population_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Linear-interpolated quantile of already sorted data, `q` in [0, 1].
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
