//! Chi-square helpers and consistency statistics.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_quantile(dof: usize, p: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive dof")
        .inverse_cdf(p)
}

/// Two-sided band containing `mass` of the chi-square distribution.
pub fn chi2_band(dof: usize, mass: f64) -> (f64, f64) {
    let tail = 0.5 * (1.0 - mass);
    (chi2_quantile(dof, tail), chi2_quantile(dof, 1.0 - tail))
}

/// Normalized estimation error squared `eᵀ P⁻¹ e`. Returns `None` when `P`
/// is not positive definite.
pub fn nees(error: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    Some(error.dot(&chol.solve(error)))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}
