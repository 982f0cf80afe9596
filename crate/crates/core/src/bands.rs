//! Simultaneous bands and joint credible regions over posterior draws.

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;
use std::path::Path;

use crate::data::dot;
use crate::error::{CoxError, Result};
use crate::hazard::HistogramHazard;
use crate::stats::{chi2_quantile_2dof, empirical_quantile, trapezoid};

/// Which curve a band is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandTarget {
    /// Conditional cumulative hazard Lambda(t) e^{theta'z}.
    CumHaz,
    /// Conditional survival exp(-Lambda(t) e^{theta'z}).
    Survival,
}

/// A simultaneous band on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Nominal simultaneous coverage in (0,1).
    pub level: f64,
}

impl Band {
    pub fn new(
        grid: Vec<f64>,
        center: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        level: f64,
    ) -> Result<Self> {
        let n = grid.len();
        if center.len() != n || lower.len() != n || upper.len() != n {
            return Err(CoxError::Domain("band vectors must share the grid length".into()));
        }
        if !(0.0..1.0).contains(&level) {
            return Err(CoxError::Domain(format!("level {level} outside (0,1)")));
        }
        for i in 0..n {
            if lower[i] > center[i] + 1e-12 || center[i] > upper[i] + 1e-12 {
                return Err(CoxError::Domain(format!(
                    "band ordering violated at grid point {i}"
                )));
            }
        }
        Ok(Self {
            grid,
            center,
            lower,
            upper,
            level,
        })
    }

    /// True at every grid point: lower <= value <= upper.
    pub fn covers(&self, true_curve: &[f64]) -> Result<bool> {
        if true_curve.len() != self.grid.len() {
            return Err(CoxError::Precondition("grid mismatch in covers".into()));
        }
        Ok(self
            .lower
            .iter()
            .zip(&self.upper)
            .zip(true_curve)
            .all(|((lo, hi), v)| lo <= v && v <= hi))
    }

    /// Trapezoid integral of (upper - lower) over the grid.
    pub fn area(&self) -> f64 {
        let widths: Vec<f64> = self
            .upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .collect();
        trapezoid(&self.grid, &widths)
    }

    /// Write as CSV with columns `t,center,lower,upper`.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "center", "lower", "upper"])?;
        for i in 0..self.grid.len() {
            w.write_record(&[
                self.grid[i].to_string(),
                self.center[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.to_csv(std::fs::File::create(path)?)
    }
}

/// Evaluate the curve of one posterior draw on `grid`.
///
/// CumHaz gives Lambda(t) e^{theta'z}; Survival gives
/// exp(-Lambda(t) e^{theta'z}), which lies in (0,1] and is nonincreasing.
pub fn curve_from_draw(
    theta: &[f64],
    hazard: &HistogramHazard,
    z: &[f64],
    target: BandTarget,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let scale = dot(theta, z).exp();
    grid.iter()
        .map(|&t| {
            let v = hazard.cumulative(t)? * scale;
            Ok(match target {
                BandTarget::CumHaz => v,
                BandTarget::Survival => (-v).exp(),
            })
        })
        .collect()
}

/// Fixed-width band: center is the pointwise mean curve, the radius is the
/// level-quantile of the draws' sup-distances from the center. Survival
/// bands are clipped to [0,1].
///
/// Returns the band together with the pre-clipping area 2R.
pub fn fixed_width_credible_band(
    curves: &[Vec<f64>],
    level: f64,
    grid: &[f64],
    target: BandTarget,
) -> Result<(Band, f64)> {
    if curves.len() < 100 {
        return Err(CoxError::Precondition(format!(
            "need at least 100 curves, got {}",
            curves.len()
        )));
    }
    let g = grid.len();
    if curves.iter().any(|c| c.len() != g) {
        return Err(CoxError::Precondition("curve/grid length mismatch".into()));
    }
    let mut center = vec![0.0; g];
    for curve in curves {
        for (c, v) in center.iter_mut().zip(curve) {
            *c += v;
        }
    }
    let m = curves.len() as f64;
    for c in &mut center {
        *c /= m;
    }
    let sups: Vec<f64> = curves
        .iter()
        .map(|curve| {
            curve
                .iter()
                .zip(&center)
                .map(|(v, c)| (v - c).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let radius = empirical_quantile(&sups, level)?;
    let clip = matches!(target, BandTarget::Survival);
    let lower: Vec<f64> = center
        .iter()
        .map(|c| {
            let v = c - radius;
            if clip {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect();
    let upper: Vec<f64> = center
        .iter()
        .map(|c| {
            let v = c + radius;
            if clip {
                v.min(1.0)
            } else {
                v
            }
        })
        .collect();
    let band = Band::new(grid.to_vec(), center, lower, upper, level)?;
    Ok((band, 2.0 * radius))
}

/// Joint credible regions for a cloud of (theta_1, Lambda(1)) pairs.
#[derive(Debug, Clone, Serialize)]
pub struct JointRegions {
    pub mean: [f64; 2],
    /// Sample covariance, row major.
    pub covariance: [[f64; 2]; 2],
    /// Area of the elliptical credible set at the requested level.
    pub ellipse_area: f64,
    /// Chi-square(2) radius used by the ellipse.
    pub ellipse_radius_sq: f64,
    /// Per-coordinate interval bounds of the rectangular set.
    pub rectangle: [[f64; 2]; 2],
    pub rectangle_area: f64,
    pub level: f64,
}

impl JointRegions {
    /// Is the point inside the elliptical set?
    pub fn ellipse_contains(&self, x: f64, y: f64) -> bool {
        let cov = Matrix2::new(
            self.covariance[0][0],
            self.covariance[0][1],
            self.covariance[1][0],
            self.covariance[1][1],
        );
        let d = Vector2::new(x - self.mean[0], y - self.mean[1]);
        match cov.try_inverse() {
            Some(inv) => (d.transpose() * inv * d)[(0, 0)] <= self.ellipse_radius_sq,
            None => false,
        }
    }
}

/// Ellipse from the sample mean and covariance at chi2_2(level); rectangle
/// from per-coordinate two-sided intervals, each at marginal mass
/// 1 - (1 - level)/2.
pub fn joint_credible_regions(pairs: &[(f64, f64)], level: f64) -> Result<JointRegions> {
    if pairs.len() < 100 {
        return Err(CoxError::Precondition(format!(
            "need at least 100 pairs, got {}",
            pairs.len()
        )));
    }
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mean = [crate::stats::mean(&a), crate::stats::mean(&b)];
    let cov = [
        [crate::stats::variance(&a), crate::stats::covariance(&a, &b)],
        [crate::stats::covariance(&a, &b), crate::stats::variance(&b)],
    ];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if !(det.is_finite() && det > 1e-300) {
        return Err(CoxError::LinearAlgebra(
            "sample covariance is singular; credible region degenerates".into(),
        ));
    }
    let radius_sq = chi2_quantile_2dof(level);
    let ellipse_area = std::f64::consts::PI * radius_sq * det.sqrt();

    let marginal = 1.0 - (1.0 - level) / 2.0;
    let tail = (1.0 - marginal) / 2.0;
    let interval = |v: &[f64]| -> Result<[f64; 2]> {
        Ok([
            empirical_quantile(v, tail)?,
            empirical_quantile(v, 1.0 - tail)?,
        ])
    };
    let ia = interval(&a)?;
    let ib = interval(&b)?;
    let rectangle_area = (ia[1] - ia[0]) * (ib[1] - ib[0]);
    Ok(JointRegions {
        mean,
        covariance: cov,
        ellipse_area,
        ellipse_radius_sq: radius_sq,
        rectangle: [ia, ib],
        rectangle_area,
        level,
    })
}
