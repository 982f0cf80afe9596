//! Small shared statistics helpers.

use crate::error::{CoxError, Result};

/// Empirical level-quantile as an order statistic: the ceil(level * m)-th
/// smallest value (1-indexed). With values {1,...,100} and level 0.95 this
/// is the 95th order statistic.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CoxError::Precondition("quantile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(CoxError::Domain(format!("level {level} outside [0,1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sd(values: &[f64]) -> f64 {
    variance(values).sqrt()
}

pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 || n != b.len() {
        return f64::NAN;
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    covariance(a, b) / (sd(a) * sd(b))
}

/// Chi-square quantile with 2 degrees of freedom: -2 log(1 - level).
pub fn chi2_quantile_2dof(level: f64) -> f64 {
    -2.0 * (1.0 - level).ln()
}

/// One-sample Kolmogorov-Smirnov test statistic against a CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Asymptotic KS p-value with the finite-sample correction
/// lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) d   (Stephens 1970).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Trapezoid integral of tabulated `values` over `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum()
}

/// Equispaced grid over [0, 1] with `points` entries (both ends included).
pub fn unit_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_is_the_stated_order_statistic() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&values, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&values, 1.0).unwrap(), 100.0);
        assert_eq!(empirical_quantile(&values, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn chi2_2dof_value() {
        assert_relative_eq!(chi2_quantile_2dof(0.95), 5.991464547107979, epsilon = 1e-12);
    }

    #[test]
    fn ks_accepts_true_uniform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let sample: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, sample.len()) > 0.01);
    }

    #[test]
    fn ks_rejects_wrong_law() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let sample: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..1.0f64).powi(2)).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, sample.len()) < 1e-6);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let grid = unit_grid(11);
        let values: Vec<f64> = grid.iter().map(|t| 2.0 * t + 1.0).collect();
        assert_relative_eq!(trapezoid(&grid, &values), 2.0, epsilon = 1e-14);
    }
}
