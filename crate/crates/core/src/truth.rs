//! True data-generating configurations: named baseline hazards, the
//! regression coefficient, covariate and censoring laws.

use serde::{Deserialize, Serialize};

use crate::error::{CoxError, Result};

/// Horizon for latent event-time generation; anything past the
/// administrative cutoff at 1 is censored, so the exact value only has
/// to exceed 1.
pub const T_MAX: f64 = 4.0;

const INVERSION_TABLE_LEN: usize = 4096;

/// Censoring regime used when generating data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringMode {
    /// Deterministic cutoff of follow-up at t = 1.
    AdminOnly,
    /// Uniform(0,1) censoring time, plus the cutoff at t = 1.
    AdminPlusUniform,
}

/// Baseline hazard on [0,1], extended by its value at 1 beyond the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BaselineHazard {
    /// 6((t+0.05)^3 - 2(t+0.05)^2 + (t+0.05)) + 0.7
    SmoothA,
    /// 0.8 sin(2 pi (t+0.05)) + (t+0.05)^4 - 1.8 (t+0.05)^2 + 2
    SmoothB,
    /// 3 on [0,0.4), 1.5 on [0.4,0.6), 2 on [0.6,1]
    Piecewise,
    /// User-supplied positive values on an equispaced grid over [0,1],
    /// interpolated linearly.
    Tabulated { values: Vec<f64> },
}

impl BaselineHazard {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "smooth-a" => Ok(Self::SmoothA),
            "smooth-b" => Ok(Self::SmoothB),
            "piecewise" => Ok(Self::Piecewise),
            other => Err(CoxError::Parse(format!("unknown baseline hazard {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Tabulated { values } = self {
            if values.len() < 2 {
                return Err(CoxError::Domain("tabulated hazard needs >= 2 values".into()));
            }
            if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(CoxError::Domain(
                    "tabulated hazard values must be finite and positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// lambda_0(t). Defined for all t >= 0; constant past t = 1.
    pub fn hazard(&self, t: f64) -> f64 {
        let t = t.min(1.0);
        match self {
            Self::SmoothA => {
                let u = t + 0.05;
                6.0 * (u * u * u - 2.0 * u * u + u) + 0.7
            }
            Self::SmoothB => {
                let u = t + 0.05;
                0.8 * (2.0 * std::f64::consts::PI * u).sin() + u.powi(4) - 1.8 * u * u + 2.0
            }
            Self::Piecewise => {
                if t < 0.4 {
                    3.0
                } else if t < 0.6 {
                    1.5
                } else {
                    2.0
                }
            }
            Self::Tabulated { values } => {
                let m = values.len() - 1;
                let x = t * m as f64;
                let i = (x.floor() as usize).min(m - 1);
                let frac = x - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            }
        }
    }

    /// Lambda_0(t) = int_0^t lambda_0. Closed form for the named hazards;
    /// trapezoid on the tabulation grid (exact for a piecewise-linear
    /// integrand) for tabulated ones.
    pub fn cumulative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (t_in, excess) = if t > 1.0 { (1.0, t - 1.0) } else { (t, 0.0) };
        let base = match self {
            Self::SmoothA => {
                // antiderivative of 6(u^3 - 2u^2 + u) in u = t + 0.05
                fn p(u: f64) -> f64 {
                    6.0 * (u.powi(4) / 4.0 - 2.0 * u.powi(3) / 3.0 + u * u / 2.0)
                }
                p(t_in + 0.05) - p(0.05) + 0.7 * t_in
            }
            Self::SmoothB => {
                let two_pi = 2.0 * std::f64::consts::PI;
                fn q(u: f64) -> f64 {
                    u.powi(5) / 5.0 - 0.6 * u.powi(3)
                }
                -0.8 / two_pi * ((two_pi * (t_in + 0.05)).cos() - (two_pi * 0.05).cos())
                    + q(t_in + 0.05)
                    - q(0.05)
                    + 2.0 * t_in
            }
            Self::Piecewise => {
                if t_in < 0.4 {
                    3.0 * t_in
                } else if t_in < 0.6 {
                    1.2 + 1.5 * (t_in - 0.4)
                } else {
                    1.5 + 2.0 * (t_in - 0.6)
                }
            }
            Self::Tabulated { values } => {
                let m = values.len() - 1;
                let h = 1.0 / m as f64;
                let x = t_in * m as f64;
                let i = (x.floor() as usize).min(m - 1);
                let mut acc = 0.0;
                for j in 0..i {
                    acc += 0.5 * (values[j] + values[j + 1]) * h;
                }
                let frac = x - i as f64;
                let lam_t = values[i] * (1.0 - frac) + values[i + 1] * frac;
                acc + 0.5 * (values[i] + lam_t) * frac * h
            }
        };
        base + excess * self.hazard(1.0)
    }

    /// Solve Lambda_0(t) = target on [0, T_MAX]. Returns `T_MAX` when the
    /// target exceeds Lambda_0(T_MAX) (the draw will be censored anyway).
    ///
    /// A cached 4096-point cumulative table brackets the root; bisection on
    /// the exact cumulative finishes to |Lambda_0(t) - target| <= 1e-12.
    pub(crate) fn invert_cumulative(&self, target: f64, table: &InversionTable) -> Result<f64> {
        if self.hazard(1.0) <= 0.0 {
            return Err(CoxError::Domain("hazard vanishes; not invertible".into()));
        }
        if target <= 0.0 {
            return Ok(0.0);
        }
        if target >= table.cum[INVERSION_TABLE_LEN] {
            return Ok(T_MAX);
        }
        // binary search for the bracketing table cell
        let idx = table.cum.partition_point(|&v| v < target);
        let (mut lo, mut hi) = (table.t[idx - 1], table.t[idx]);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub(crate) fn inversion_table(&self) -> InversionTable {
        let mut t = Vec::with_capacity(INVERSION_TABLE_LEN + 1);
        let mut cum = Vec::with_capacity(INVERSION_TABLE_LEN + 1);
        for i in 0..=INVERSION_TABLE_LEN {
            let ti = T_MAX * i as f64 / INVERSION_TABLE_LEN as f64;
            t.push(ti);
            cum.push(self.cumulative(ti));
        }
        InversionTable { t, cum }
    }
}

/// Monotone bracketing table for hazard inversion.
#[derive(Debug, Clone)]
pub(crate) struct InversionTable {
    t: Vec<f64>,
    cum: Vec<f64>,
}

/// Full data-generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub theta0: Vec<f64>,
    pub lambda0: BaselineHazard,
    pub censoring: CensoringMode,
}

impl TruthSpec {
    pub fn new(theta0: Vec<f64>, lambda0: BaselineHazard, censoring: CensoringMode) -> Result<Self> {
        lambda0.validate()?;
        if theta0.is_empty() || theta0.iter().any(|v| !v.is_finite()) {
            return Err(CoxError::Domain("theta0 must be nonempty and finite".into()));
        }
        Ok(Self {
            theta0,
            lambda0,
            censoring,
        })
    }

    pub fn p(&self) -> usize {
        self.theta0.len()
    }

    /// True survival function at covariate `z`: exp(-Lambda_0(t) e^{theta0'z}).
    pub fn survival(&self, t: f64, z: &[f64]) -> f64 {
        let lin = crate::data::dot(&self.theta0, z);
        (-self.lambda0.cumulative(t) * lin.exp()).exp()
    }

    /// Survivor function of the censoring variable, as used in the
    /// information integrals: 1 for admin-only (left limit at the atom),
    /// 1-u for admin-plus-uniform.
    pub fn censoring_survivor(&self, u: f64) -> f64 {
        match self.censoring {
            CensoringMode::AdminOnly => 1.0,
            CensoringMode::AdminPlusUniform => (1.0 - u).max(0.0),
        }
    }
}
