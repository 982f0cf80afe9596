//! Haar multiscale machinery: the histogram <-> wavelet-coefficient
//! transform, the dyadic cut-off rule, and the norms used as posterior
//! diagnostics.

use crate::error::{CoxError, Result};
use crate::hazard::HistogramHazard;
use crate::truth::BaselineHazard;

/// Haar coefficients of a step function on 2^(L+1) dyadic bins: one
/// scaling coefficient (index -1) plus detail levels l = 0..=L with 2^l
/// coefficients each, matching the L2 inner products with the Haar basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarCoefficients {
    pub scaling: f64,
    /// details[l][k] for 0 <= l <= L, 0 <= k < 2^l.
    pub details: Vec<Vec<f64>>,
}

impl HaarCoefficients {
    pub fn level(&self) -> usize {
        self.details.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        1 + self.details.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_power_of_two(len: usize) -> Result<u32> {
    if len < 2 || !len.is_power_of_two() {
        return Err(CoxError::Domain(format!(
            "length {len} is not a power of two >= 2"
        )));
    }
    Ok(len.trailing_zeros())
}

/// Forward transform by the O(K) pyramid: block sums halve in length per
/// stage, and each stage's differences give one detail level.
pub fn haar_forward(heights: &[f64]) -> Result<HaarCoefficients> {
    let levels = check_power_of_two(heights.len())?; // = L + 1
    let l_max = levels as usize - 1;
    let scale_all = 1.0 / heights.len() as f64; // 2^{-(L+1)}
    let mut sums = heights.to_vec();
    let mut details: Vec<Vec<f64>> = vec![Vec::new(); l_max + 1];
    for l in (0..=l_max).rev() {
        let half = sums.len() / 2;
        let mut next = Vec::with_capacity(half);
        let mut diff = Vec::with_capacity(half);
        for k in 0..half {
            next.push(sums[2 * k] + sums[2 * k + 1]);
            diff.push(sums[2 * k] - sums[2 * k + 1]);
        }
        let factor = scale_all * 2f64.powf(l as f64 / 2.0);
        details[l] = diff.into_iter().map(|d| d * factor).collect();
        sums = next;
    }
    Ok(HaarCoefficients {
        scaling: sums[0] * scale_all,
        details,
    })
}

/// Inverse transform; exact up to rounding.
pub fn haar_inverse(coeffs: &HaarCoefficients) -> Vec<f64> {
    let l_max = coeffs.details.len() - 1;
    let k_total = 1usize << (l_max + 1);
    let mut sums = vec![coeffs.scaling * k_total as f64];
    for l in 0..=l_max {
        let factor = k_total as f64 / 2f64.powf(l as f64 / 2.0);
        let mut next = Vec::with_capacity(sums.len() * 2);
        for (k, s) in sums.iter().enumerate() {
            let d = coeffs.details[l][k] * factor;
            next.push(0.5 * (s + d));
            next.push(0.5 * (s - d));
        }
        sums = next;
    }
    sums
}

/// Cut-off level: the integer L minimizing |2^L - (n / log n)^{1/(2 beta + 1)}|,
/// ties broken toward the smaller L.
pub fn cutoff(n: usize, beta: f64) -> Result<usize> {
    if n < 2 {
        return Err(CoxError::Precondition("cutoff requires n >= 2".into()));
    }
    if beta <= 0.0 {
        return Err(CoxError::Precondition("cutoff requires beta > 0".into()));
    }
    let target = (n as f64 / (n as f64).ln()).powf(1.0 / (2.0 * beta + 1.0));
    Ok(closest_power_level(target))
}

/// Level L >= 0 with 2^L closest to `target`; ties go to the smaller L.
fn closest_power_level(target: f64) -> usize {
    if target <= 1.0 {
        return 0;
    }
    let lo = target.log2().floor() as usize;
    let below = (1u64 << lo) as f64;
    let above = (1u64 << (lo + 1)) as f64;
    if (target - below) <= (above - target) {
        lo
    } else {
        lo + 1
    }
}

/// Sup-norm distance between a histogram hazard scaled by `scale_h` and a
/// baseline hazard scaled by `scale_truth`, over the union of `grid` and
/// all bin edges (each edge evaluated against its bin from both sides, so
/// jumps are never missed).
pub fn sup_norm_distance(
    hazard: &HistogramHazard,
    lambda0: &BaselineHazard,
    grid: &[f64],
    scale_h: f64,
    scale_truth: f64,
) -> f64 {
    let w = hazard.bin_width();
    let mut sup: f64 = 0.0;
    for (k, &h) in hazard.heights().iter().enumerate() {
        let (a, b) = (k as f64 * w, (k + 1) as f64 * w);
        let hv = h * scale_h;
        let mut eval = |t: f64| {
            let diff = (hv - lambda0.hazard(t) * scale_truth).abs();
            if diff > sup {
                sup = diff;
            }
        };
        eval(a);
        eval(b);
        for &t in grid {
            if t > a && t < b {
                eval(t);
            }
        }
    }
    sup
}

/// sup over levels of max_k |c_{lk}| / w_l, with weight 1 on the scaling
/// coefficient. `weights[l]` must be >= 1 and cover every detail level.
pub fn multiscale_norm(coeffs: &HaarCoefficients, weights: &[f64]) -> Result<f64> {
    if weights.len() < coeffs.details.len() {
        return Err(CoxError::Precondition(format!(
            "need {} weights, got {}",
            coeffs.details.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 1.0) {
        return Err(CoxError::Precondition("weights must be >= 1".into()));
    }
    let mut best = coeffs.scaling.abs();
    for (l, level) in coeffs.details.iter().enumerate() {
        for c in level {
            best = best.max(c.abs() / weights[l]);
        }
    }
    Ok(best)
}

/// Default admissible weight sequence w_l = max(l, 1).
pub fn default_weights(levels: usize) -> Vec<f64> {
    (0..levels).map(|l| (l as f64).max(1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Dense transform matrix straight from the indicator definition:
    /// row -1 is 2^{-(L+1)}; row (l,k) is 2^{-(L+1)+l/2} on fine bins in the
    /// left half of I_k^l and the negation on the right half.
    fn dense_matrix(k_total: usize) -> Vec<Vec<f64>> {
        let l_max = k_total.trailing_zeros() as usize - 1;
        let base = 1.0 / k_total as f64;
        let mut rows = vec![vec![base; k_total]];
        for l in 0..=l_max {
            for k in 0..(1usize << l) {
                let mut row = vec![0.0; k_total];
                let fine_per_half = k_total >> (l + 1);
                let start = k * (k_total >> l);
                let factor = base * 2f64.powf(l as f64 / 2.0);
                for j in 0..fine_per_half {
                    row[start + j] = factor;
                    row[start + fine_per_half + j] = -factor;
                }
                rows.push(row);
            }
        }
        rows
    }

    fn flatten(c: &HaarCoefficients) -> Vec<f64> {
        let mut v = vec![c.scaling];
        for level in &c.details {
            v.extend(level);
        }
        v
    }

    #[test]
    fn constant_heights_have_zero_details() {
        let c = haar_forward(&[2.5; 16]).unwrap();
        assert_relative_eq!(c.scaling, 2.5, epsilon = 1e-15);
        for level in &c.details {
            for &d in level {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn pyramid_matches_dense_matrix() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for k_total in [2usize, 4, 8, 16, 32, 64] {
            let x: Vec<f64> = (0..k_total).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fast = flatten(&haar_forward(&x).unwrap());
            let dense = dense_matrix(k_total);
            for (row, &got) in dense.iter().zip(&fast) {
                let want: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                assert_relative_eq!(got, want, epsilon = 1e-12);
            }
            // orthogonality of 2^{(L+1)/2} Psi: norms match after scaling
            let coeff_norm: f64 = fast.iter().map(|v| v * v).sum::<f64>().sqrt();
            let x_norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(
                coeff_norm * (k_total as f64).sqrt(),
                x_norm,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn round_trip_is_exact_up_to_4096() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for exp in [1usize, 4, 8, 12] {
            let k_total = 1usize << exp;
            let x: Vec<f64> = (0..k_total).map(|_| rng.random_range(0.1..5.0)).collect();
            let back = haar_inverse(&haar_forward(&x).unwrap());
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(haar_forward(&[1.0, 2.0, 3.0]).is_err());
        assert!(haar_forward(&[1.0]).is_err());
    }

    #[test]
    fn cutoff_examples() {
        // (200 / log 200)^(1/2) ~ 6.14; 8 is closer than 4
        assert_eq!(cutoff(200, 0.5).unwrap(), 3);
        assert_eq!(cutoff(1000, 0.5).unwrap(), 4);
    }

    #[test]
    fn closest_power_tie_breaks_down() {
        // target 3 is equidistant from 2 and 4
        assert_eq!(closest_power_level(3.0), 1);
        assert_eq!(closest_power_level(6.0), 2);
        assert_eq!(closest_power_level(2.0), 1);
        assert_eq!(closest_power_level(0.7), 0);
    }

    #[test]
    fn cutoff_monotone_and_bracketed() {
        let mut prev = 0;
        let mut n = 100usize;
        while n <= 1_000_000 {
            let l = cutoff(n, 0.5).unwrap();
            assert!(l >= prev, "cutoff not monotone at n={n}");
            let target = (n as f64 / (n as f64).ln()).sqrt();
            let pow = (1usize << l) as f64;
            assert!(pow >= target / 2f64.sqrt() && pow <= target * 2f64.sqrt());
            prev = l;
            n = (n as f64 * 1.37) as usize;
        }
    }

    #[test]
    fn multiscale_norm_direct_cases() {
        let mut c = haar_forward(&[0.0; 8]).unwrap();
        assert_eq!(multiscale_norm(&c, &default_weights(3)).unwrap(), 0.0);
        c.details[2][1] = 3.0;
        let got = multiscale_norm(&c, &[1.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(got, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn sup_norm_identity_and_offset() {
        let h = HistogramHazard::discretize(2, &BaselineHazard::Piecewise).unwrap();
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        // aligned bins except around the non-dyadic breaks; offset case is clean
        let heights = h.heights().to_vec();
        let shifted =
            HistogramHazard::new(2, heights.iter().map(|v| v + 0.1).collect()).unwrap();
        let base = sup_norm_distance(&h, &BaselineHazard::Piecewise, &grid, 1.0, 1.0);
        let moved = sup_norm_distance(&shifted, &BaselineHazard::Piecewise, &grid, 1.0, 1.0);
        assert_relative_eq!(moved, base + 0.1, epsilon = 1e-10);
    }

    #[test]
    fn sup_norm_against_constant_truth() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let constant_two = BaselineHazard::Tabulated {
            values: vec![2.0, 2.0],
        };
        let exact = HistogramHazard::new(0, vec![2.0, 2.0]).unwrap();
        assert_eq!(
            sup_norm_distance(&exact, &constant_two, &grid, 1.0, 1.0),
            0.0
        );
        // deviating by 1.5 on the right bin only
        let h = HistogramHazard::new(0, vec![2.0, 0.5]).unwrap();
        let d = sup_norm_distance(&h, &constant_two, &grid, 1.0, 1.0);
        assert_relative_eq!(d, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn sup_norm_matches_brute_force_grid() {
        let h = HistogramHazard::discretize(3, &BaselineHazard::SmoothA).unwrap();
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let got = sup_norm_distance(&h, &BaselineHazard::SmoothA, &grid, 1.0, 1.0);
        // brute force over 10^5 points, respecting the bin convention
        let mut brute: f64 = 0.0;
        for i in 0..=100_000 {
            let t = i as f64 / 100_000.0;
            let hv = h.hazard(t).unwrap();
            brute = brute.max((hv - BaselineHazard::SmoothA.hazard(t)).abs());
        }
        assert!((got - brute).abs() < 1e-3, "got {got}, brute {brute}");
        assert!(got >= brute - 1e-12, "endpoint evaluation must dominate");
    }

    proptest! {
        #[test]
        fn transform_is_linear(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = flatten(&haar_forward(&combo).unwrap());
            let cx = flatten(&haar_forward(&x).unwrap());
            let cy = flatten(&haar_forward(&y).unwrap());
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn multiscale_norm_dominated_by_l2(seed in 0u64..200) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c = haar_forward(&x).unwrap();
            let weights = default_weights(c.details.len());
            let norm = multiscale_norm(&c, &weights).unwrap();
            let l2: f64 = flatten(&c).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= l2 + 1e-12);
        }
    }
}
