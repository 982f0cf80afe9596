//! Numerical evaluation of the limiting objects of the Cox model: the
//! information integrands M0, M1, M2, the least-favorable direction, the
//! efficient information matrix, the LAN empirical process, the limiting
//! joint covariance of (theta, Lambda(1)), and simulation of the Gaussian
//! limit process for the cumulative hazard.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{dot, SurvivalDataset};
use crate::error::{CoxError, Result};
use crate::seed::derive_seed;
use crate::stats::trapezoid;
use crate::truth::TruthSpec;

/// Gauss-Hermite nodes and weights for integrals against e^{-x^2}
/// (physicists' convention), computed by Golub-Welsch.
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut jacobi = DMatrix::zeros(n, n);
        for i in 1..n {
            let b = (i as f64 / 2.0).sqrt();
            jacobi[(i - 1, i)] = b;
            jacobi[(i, i - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// E[g(S)] for S ~ N(0, sigma^2).
    pub fn normal_expectation(&self, sigma: f64, g: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sigma;
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(scale * x);
        }
        acc / std::f64::consts::PI.sqrt()
    }
}

/// Tabulated information quantities over a u-grid on [0,1].
#[derive(Debug, Clone)]
pub struct AsymptoticTables {
    pub u_grid: Vec<f64>,
    /// M0(u), scalar per grid point.
    pub m0: Vec<f64>,
    /// M1(u), p entries per grid point (row major).
    pub m1: Vec<f64>,
    /// M2(u), p*p entries per grid point (row major).
    pub m2: Vec<f64>,
    /// Least-favorable direction M1/M0, p entries per grid point.
    pub gamma: Vec<f64>,
    /// lambda_0 on the grid.
    pub lambda0: Vec<f64>,
    /// Efficient information matrix Lambda_0{M2 - gamma gamma' M0}.
    pub i_eff: DMatrix<f64>,
    /// Relative change of the efficient information when the quadrature
    /// node count doubles.
    pub quadrature_error: f64,
    pub truth: TruthSpec,
}

impl AsymptoticTables {
    pub fn p(&self) -> usize {
        self.truth.p()
    }

    fn interp(&self, values: &[f64], u: f64) -> f64 {
        let grid = &self.u_grid;
        if u <= grid[0] {
            return values[0];
        }
        if u >= *grid.last().unwrap() {
            return *values.last().unwrap();
        }
        let idx = grid.partition_point(|&g| g <= u) - 1;
        let frac = (u - grid[idx]) / (grid[idx + 1] - grid[idx]);
        values[idx] * (1.0 - frac) + values[idx + 1] * frac
    }

    /// Coordinate a of the least-favorable direction at time u.
    pub fn gamma_at(&self, u: f64, coord: usize) -> f64 {
        let p = self.p();
        let col: Vec<f64> = (0..self.u_grid.len())
            .map(|i| self.gamma[i * p + coord])
            .collect();
        self.interp(&col, u)
    }

    pub fn m0_at(&self, u: f64) -> f64 {
        self.interp(&self.m0, u)
    }
}

/// Per-point conditional moments A_m(u) = E[S^m exp(S - Lambda e^S)] for
/// S = theta0'Z ~ N(0, sigma^2); the covariate moments follow by Gaussian
/// conditioning: E[Z f(S)] = theta0 E[S f]/sigma^2 and
/// E[ZZ' f(S)] = (I - theta0 theta0'/sigma^2) E[f] + theta0 theta0' E[S^2 f]/sigma^4.
fn moments_at(gh: &GaussHermite, sigma: f64, cum: f64) -> (f64, f64, f64) {
    if sigma == 0.0 {
        let f = (-cum).exp();
        return (f, 0.0, 0.0);
    }
    let f = |s: f64| (s - cum * s.exp()).exp();
    let a0 = gh.normal_expectation(sigma, f);
    let a1 = gh.normal_expectation(sigma, |s| s * f(s));
    let a2 = gh.normal_expectation(sigma, |s| s * s * f(s));
    (a0, a1, a2)
}

fn tables_with_nodes(truth: &TruthSpec, u_points: usize, nodes: usize) -> AsymptoticTables {
    let p = truth.p();
    let gh = GaussHermite::new(nodes);
    let sigma = dot(&truth.theta0, &truth.theta0).sqrt();
    let u_grid: Vec<f64> = (0..u_points)
        .map(|i| i as f64 / (u_points - 1) as f64)
        .collect();
    let mut m0 = Vec::with_capacity(u_points);
    let mut m1 = Vec::with_capacity(u_points * p);
    let mut m2 = Vec::with_capacity(u_points * p * p);
    let mut gamma = Vec::with_capacity(u_points * p);
    let mut lambda0 = Vec::with_capacity(u_points);
    for &u in &u_grid {
        let cum = truth.lambda0.cumulative(u);
        let gbar = truth.censoring_survivor(u);
        let (a0, a1, a2) = moments_at(&gh, sigma, cum);
        m0.push(gbar * a0);
        lambda0.push(truth.lambda0.hazard(u));
        // gamma = M1/M0 is free of the censoring survivor
        let gam_scale = if sigma == 0.0 { 0.0 } else { a1 / (sigma * sigma * a0) };
        for a in 0..p {
            m1.push(gbar * truth.theta0[a] * gam_scale * a0);
            gamma.push(truth.theta0[a] * gam_scale);
        }
        for a in 0..p {
            for b in 0..p {
                let iso = if a == b { 1.0 } else { 0.0 };
                let tt = truth.theta0[a] * truth.theta0[b];
                let val = if sigma == 0.0 {
                    iso * a0
                } else {
                    (iso - tt / (sigma * sigma)) * a0 + tt / (sigma * sigma * sigma * sigma) * a2
                };
                m2.push(gbar * val);
            }
        }
    }
    // I_eff = int (M2 - gamma gamma' M0) lambda_0 du by trapezoid
    let mut i_eff = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            let integrand: Vec<f64> = (0..u_points)
                .map(|i| {
                    (m2[i * p * p + a * p + b]
                        - gamma[i * p + a] * gamma[i * p + b] * m0[i])
                        * lambda0[i]
                })
                .collect();
            i_eff[(a, b)] = trapezoid(&u_grid, &integrand);
        }
    }
    AsymptoticTables {
        u_grid,
        m0,
        m1,
        m2,
        gamma,
        lambda0,
        i_eff,
        quadrature_error: 0.0,
        truth: truth.clone(),
    }
}

/// Evaluate the information tables on `u_points` grid points, with 64-node
/// Gauss-Hermite integration over the covariate law (checked against 128
/// nodes; a relative drift above 1e-6 is an accuracy error).
pub fn compute_tables(truth: &TruthSpec, u_points: usize) -> Result<AsymptoticTables> {
    if u_points < 2 {
        return Err(CoxError::Precondition("u_points must be >= 2".into()));
    }
    let mut tables = tables_with_nodes(truth, u_points, 64);
    let check = tables_with_nodes(truth, u_points, 128);
    let denom = tables.i_eff.amax().max(1e-300);
    let diff = (&tables.i_eff - &check.i_eff).amax() / denom;
    if diff > 1e-6 {
        return Err(CoxError::Accuracy(format!(
            "Gauss-Hermite integration drifts by {diff:.3e} when doubling nodes"
        )));
    }
    tables.quadrature_error = diff;
    Ok(tables)
}

/// Limiting covariance of sqrt(n)(theta'a - ..., Lambda{b} - ...) under
/// the joint Bernstein-von Mises law:
/// [[a' I^{-1} a, -a' I^{-1} L{b gamma}],
///  [.,           L{b^2/M0} + L{b gamma}' I^{-1} L{b gamma}]]
/// with L{f} = int f dLambda_0. For (theta_1, Lambda(1)) take a = e_1 and
/// b identically 1.
pub fn bvm_covariance(
    tables: &AsymptoticTables,
    a: &[f64],
    b: &[f64],
) -> Result<nalgebra::Matrix2<f64>> {
    let p = tables.p();
    if a.len() != p {
        return Err(CoxError::Precondition("direction a has wrong dimension".into()));
    }
    if b.len() != tables.u_grid.len() {
        return Err(CoxError::Precondition(
            "curve b must be tabulated on the table grid".into(),
        ));
    }
    let n_grid = tables.u_grid.len();
    let inv = tables
        .i_eff
        .clone()
        .try_inverse()
        .ok_or_else(|| CoxError::LinearAlgebra("efficient information is singular".into()))?;

    // L{b gamma} per coordinate
    let mut l_bgamma = DVector::zeros(p);
    for c in 0..p {
        let integrand: Vec<f64> = (0..n_grid)
            .map(|i| b[i] * tables.gamma[i * p + c] * tables.lambda0[i])
            .collect();
        l_bgamma[c] = trapezoid(&tables.u_grid, &integrand);
    }
    // L{b^2 / M0}
    let integrand: Vec<f64> = (0..n_grid)
        .map(|i| b[i] * b[i] / tables.m0[i] * tables.lambda0[i])
        .collect();
    let l_b_gamma_b = trapezoid(&tables.u_grid, &integrand);
    if !l_b_gamma_b.is_finite() {
        return Err(CoxError::Domain(
            "Lambda_0{b^2/M0} diverges (M0 vanishes where b is nonzero)".into(),
        ));
    }
    let a_vec = DVector::from_column_slice(a);
    let sigma11 = (a_vec.transpose() * &inv * &a_vec)[(0, 0)];
    let sigma12 = -(a_vec.transpose() * &inv * &l_bgamma)[(0, 0)];
    let sigma22 = l_b_gamma_b + (l_bgamma.transpose() * &inv * &l_bgamma)[(0, 0)];
    Ok(nalgebra::Matrix2::new(sigma11, sigma12, sigma12, sigma22))
}

/// The LAN empirical process
/// W_n(vartheta, g) = n^{-1/2} sum_i { delta_i (vartheta'z_i + g(y_i))
///   - e^{theta0'z_i} (vartheta'z_i Lambda_0(y_i) + (Lambda_0 g)(y_i)) },
/// with (Lambda_0 g)(y) = int_0^y g dLambda_0 evaluated from a dense
/// cumulative table of g * lambda_0.
pub fn evaluate_wn(
    data: &SurvivalDataset,
    truth: &TruthSpec,
    vartheta: &[f64],
    g: impl Fn(f64) -> f64,
) -> Result<f64> {
    if vartheta.len() != truth.p() || data.p() != truth.p() {
        return Err(CoxError::Precondition("dimension mismatch in W_n".into()));
    }
    const GRID: usize = 4096;
    let mut cum_g = vec![0.0; GRID + 1];
    let mut prev = g(0.0) * truth.lambda0.hazard(0.0);
    for i in 1..=GRID {
        let t = i as f64 / GRID as f64;
        let cur = g(t) * truth.lambda0.hazard(t);
        cum_g[i] = cum_g[i - 1] + 0.5 * (prev + cur) / GRID as f64;
        prev = cur;
    }
    let lambda0_g = |y: f64| -> f64 {
        let x = y * GRID as f64;
        let idx = (x.floor() as usize).min(GRID - 1);
        let frac = x - idx as f64;
        cum_g[idx] * (1.0 - frac) + cum_g[idx + 1] * frac
    };
    let mut acc = 0.0;
    for s in data.subjects() {
        let v = dot(vartheta, &s.z);
        if s.delta == 1 {
            acc += v + g(s.y);
        }
        acc -= dot(&truth.theta0, &s.z).exp()
            * (v * truth.lambda0.cumulative(s.y) + lambda0_g(s.y));
    }
    Ok(acc / (data.n() as f64).sqrt())
}

/// W_n evaluated at the efficient influence direction for theta'a:
/// (I^{-1} a, -gamma' I^{-1} a). This is the p = any version of the
/// process that centers the BvM theorem for theta.
pub fn wn_efficient_direction(
    data: &SurvivalDataset,
    tables: &AsymptoticTables,
    a: &[f64],
) -> Result<f64> {
    let p = tables.p();
    let inv = tables
        .i_eff
        .clone()
        .try_inverse()
        .ok_or_else(|| CoxError::LinearAlgebra("efficient information is singular".into()))?;
    let a_vec = DVector::from_column_slice(a);
    let dir = &inv * &a_vec;
    let dir_slice: Vec<f64> = dir.iter().copied().collect();
    evaluate_wn(data, &tables.truth, &dir_slice, |u| {
        let mut g = 0.0;
        for c in 0..p {
            g -= tables.gamma_at(u, c) * dir[c];
        }
        g
    })
}

/// Sample paths of the Donsker limit process for the cumulative hazard:
/// B(U_0(t)) - V' (int_0^t gamma dLambda_0), with B a standard Brownian
/// motion, U_0(t) = int_0^t lambda_0/M_0 and V ~ N(0, I_eff^{-1})
/// independent of B.
#[derive(Debug, Clone)]
pub struct LimitPaths {
    pub grid: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
    /// Sup-norm of each path over the grid.
    pub sups: Vec<f64>,
}

pub fn simulate_limit_process(
    tables: &AsymptoticTables,
    grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<LimitPaths> {
    let p = tables.p();
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.is_empty() {
        return Err(CoxError::Precondition("grid must be strictly increasing".into()));
    }
    // U_0 and int gamma dLambda_0 cumulated on the table grid
    let n_grid = tables.u_grid.len();
    let mut u0 = vec![0.0; n_grid];
    let mut lgam = vec![0.0; n_grid * p];
    for i in 1..n_grid {
        let dt = tables.u_grid[i] - tables.u_grid[i - 1];
        let f_prev = tables.lambda0[i - 1] / tables.m0[i - 1];
        let f_cur = tables.lambda0[i] / tables.m0[i];
        u0[i] = u0[i - 1] + 0.5 * (f_prev + f_cur) * dt;
        for c in 0..p {
            let g_prev = tables.gamma[(i - 1) * p + c] * tables.lambda0[i - 1];
            let g_cur = tables.gamma[i * p + c] * tables.lambda0[i];
            lgam[i * p + c] = lgam[(i - 1) * p + c] + 0.5 * (g_prev + g_cur) * dt;
        }
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::Precondition(
            "U_0 is not finite on the grid; M0 vanishes inside [0,1]".into(),
        ));
    }
    let interp = |table: &[f64], u: f64| -> f64 {
        let g = &tables.u_grid;
        if u <= g[0] {
            return table[0];
        }
        if u >= *g.last().unwrap() {
            return *table.last().unwrap();
        }
        let idx = g.partition_point(|&x| x <= u) - 1;
        let frac = (u - g[idx]) / (g[idx + 1] - g[idx]);
        table[idx] * (1.0 - frac) + table[idx + 1] * frac
    };
    let u0_at: Vec<f64> = grid.iter().map(|&t| interp(&u0, t)).collect();
    if u0_at.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoxError::Precondition("U_0 must be nondecreasing".into()));
    }
    let lgam_at: Vec<Vec<f64>> = (0..p)
        .map(|c| {
            let col: Vec<f64> = (0..n_grid).map(|i| lgam[i * p + c]).collect();
            grid.iter().map(|&t| interp(&col, t)).collect()
        })
        .collect();
    let inv = tables
        .i_eff
        .clone()
        .try_inverse()
        .ok_or_else(|| CoxError::LinearAlgebra("efficient information is singular".into()))?;
    let chol = inv
        .cholesky()
        .ok_or_else(|| CoxError::LinearAlgebra("I_eff^{-1} is not positive definite".into()))?;
    let chol_l = chol.l();

    let paths: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, idx as u64));
            // V ~ N(0, I^{-1})
            let normals = DVector::from_iterator(
                p,
                (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            let v = &chol_l * normals;
            let mut path = Vec::with_capacity(grid.len());
            let mut b = 0.0;
            let mut prev_u0 = 0.0;
            for (j, _) in grid.iter().enumerate() {
                let du = (u0_at[j] - prev_u0).max(0.0);
                if du > 0.0 {
                    b += du.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
                prev_u0 = u0_at[j];
                let mut drift = 0.0;
                for c in 0..p {
                    drift += v[c] * lgam_at[c][j];
                }
                path.push(b - drift);
            }
            path
        })
        .collect();
    let sups = paths
        .iter()
        .map(|p| p.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    Ok(LimitPaths {
        grid: grid.to_vec(),
        paths,
        sups,
    })
}
