//! Classical two-step Cox estimation: partial-likelihood MLE, Breslow
//! cumulative-hazard estimator, and the multiplier-bootstrap simultaneous
//! confidence band.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::bands::{Band, BandTarget};
use crate::data::{dot, SurvivalDataset};
use crate::error::{CoxError, Result};
use crate::stats::empirical_quantile;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const THETA_DIVERGENCE: f64 = 50.0;

/// Nondecreasing step function with value 0 before the first jump.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    /// Strictly increasing jump locations.
    times: Vec<f64>,
    /// Cumulative value reached at each jump.
    cum: Vec<f64>,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, cum: Vec<f64>) -> Self {
        debug_assert_eq!(times.len(), cum.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self { times, cum }
    }

    pub fn zero() -> Self {
        Self {
            times: Vec::new(),
            cum: Vec::new(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u <= t);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1]
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.times
    }

    pub fn cumulative_values(&self) -> &[f64] {
        &self.cum
    }
}

/// Partial-likelihood fit: theta, per-n observed information and the
/// Breslow estimator evaluated at theta.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub theta: Vec<f64>,
    /// -Hessian/n of the log partial likelihood at theta.
    pub info: DMatrix<f64>,
    pub breslow: StepFunction,
    /// Set when the score is identically zero (no covariate variation);
    /// theta is 0 by convention in that case.
    pub degenerate: bool,
}

impl CoxFit {
    /// Plug-in conditional cumulative hazard at covariate z.
    pub fn cumhaz(&self, t: f64, z: &[f64]) -> f64 {
        self.breslow.eval(t) * dot(&self.theta, z).exp()
    }

    /// Plug-in conditional survival at covariate z.
    pub fn survival(&self, t: f64, z: &[f64]) -> f64 {
        (-self.cumhaz(t, z)).exp()
    }
}

/// Risk-set sums per distinct event time.
struct RiskScan {
    /// Distinct event times, ascending.
    event_times: Vec<f64>,
    /// Events at each distinct time.
    d: Vec<f64>,
    /// Raw risk sums S0 = sum_{y_j >= t} exp(theta'z_j) at each event time.
    s0: Vec<f64>,
    /// S1 = sum z_j exp(theta'z_j) at each event time, flattened p per time.
    s1: Vec<f64>,
}

/// Log partial likelihood, score and Hessian at theta (Breslow ties).
fn partial_likelihood_derivatives(
    data: &SurvivalDataset,
    theta: &[f64],
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = data.n();
    let p = data.p();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.subjects()[a].y.total_cmp(&data.subjects()[b].y));

    let mut lpl = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);

    let mut i = n;
    while i > 0 {
        let t = data.subjects()[order[i - 1]].y;
        let mut j = i;
        while j > 0 && data.subjects()[order[j - 1]].y == t {
            let s = &data.subjects()[order[j - 1]];
            let w = dot(theta, &s.z).exp();
            s0 += w;
            for a in 0..p {
                s1[a] += w * s.z[a];
                for b in 0..=a {
                    s2[(a, b)] += w * s.z[a] * s.z[b];
                }
            }
            j -= 1;
        }
        for &idx in &order[j..i] {
            let s = &data.subjects()[idx];
            if s.delta == 1 {
                lpl += dot(theta, &s.z) - s0.ln();
                for a in 0..p {
                    grad[a] += s.z[a] - s1[a] / s0;
                    for b in 0..=a {
                        hess[(a, b)] -= s2[(a, b)] / s0 - s1[a] * s1[b] / (s0 * s0);
                    }
                }
            }
        }
        i = j;
    }
    for a in 0..p {
        for b in (a + 1)..p {
            hess[(a, b)] = hess[(b, a)];
        }
    }
    (lpl, grad, hess)
}

/// Maximize the Cox log partial likelihood by Newton iteration with
/// step-halving, starting at 0. Also evaluates the Breslow estimator at
/// the maximizer.
pub fn fit_partial_likelihood(data: &SurvivalDataset) -> Result<CoxFit> {
    if data.is_empty() {
        return Err(CoxError::DegenerateData("empty dataset".into()));
    }
    if data.event_count() == 0 {
        return Err(CoxError::DegenerateData("no events".into()));
    }
    let n = data.n() as f64;
    let p = data.p();
    let mut theta = DVector::zeros(p);
    let (mut lpl, mut grad, mut hess) = partial_likelihood_derivatives(data, theta.as_slice());
    let mut converged = false;
    for _ in 0..MAX_ITER {
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let neg_hess = -&hess;
        let step = match neg_hess.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => {
                return Err(CoxError::LinearAlgebra(
                    "partial-likelihood Hessian is singular".into(),
                ))
            }
        };
        // step-halving keeps the objective nondecreasing
        let mut scale = 1.0;
        loop {
            let candidate = &theta + scale * &step;
            if candidate.norm() > THETA_DIVERGENCE {
                return Err(CoxError::NonConvergence(
                    "theta diverged; monotone partial likelihood".into(),
                ));
            }
            let (lpl_new, grad_new, hess_new) =
                partial_likelihood_derivatives(data, candidate.as_slice());
            if lpl_new >= lpl || scale < 1e-10 {
                theta = candidate;
                lpl = lpl_new;
                grad = grad_new;
                hess = hess_new;
                break;
            }
            scale *= 0.5;
        }
    }
    if !converged && grad.amax() > GRAD_TOL {
        return Err(CoxError::NonConvergence(format!(
            "gradient norm {} after {MAX_ITER} iterations",
            grad.amax()
        )));
    }
    let info = -&hess / n;
    let degenerate = info.amax() < 1e-14;
    let theta_vec = theta.as_slice().to_vec();
    let breslow = breslow(data, &theta_vec)?;
    Ok(CoxFit {
        theta: theta_vec,
        info,
        breslow,
        degenerate,
    })
}

/// Breslow estimator at theta:
/// Lambda_hat(t) = sum over events with y_i <= t of 1 / sum_{y_j >= y_i} e^{theta'z_j}.
pub fn breslow(data: &SurvivalDataset, theta: &[f64]) -> Result<StepFunction> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(CoxError::Domain("theta must be finite".into()));
    }
    let risk = risk_scan(data, theta);
    let mut cum = Vec::with_capacity(risk.event_times.len());
    let mut acc = 0.0;
    for j in 0..risk.event_times.len() {
        acc += risk.d[j] / risk.s0[j];
        cum.push(acc);
    }
    Ok(StepFunction::new(risk.event_times, cum))
}

fn risk_scan(data: &SurvivalDataset, theta: &[f64]) -> RiskScan {
    let n = data.n();
    let p = data.p();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.subjects()[a].y.total_cmp(&data.subjects()[b].y));
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut event_times = Vec::new();
    let mut d_vec = Vec::new();
    let mut s0_vec = Vec::new();
    let mut s1_vec: Vec<f64> = Vec::new();
    let mut i = n;
    while i > 0 {
        let t = data.subjects()[order[i - 1]].y;
        let mut j = i;
        while j > 0 && data.subjects()[order[j - 1]].y == t {
            let s = &data.subjects()[order[j - 1]];
            let w = dot(theta, &s.z).exp();
            s0 += w;
            for a in 0..p {
                s1[a] += w * s.z[a];
            }
            j -= 1;
        }
        let d_here = order[j..i]
            .iter()
            .filter(|&&idx| data.subjects()[idx].delta == 1)
            .count() as f64;
        if d_here > 0.0 {
            event_times.push(t);
            d_vec.push(d_here);
            s0_vec.push(s0);
            s1_vec.extend(s1.iter().copied());
        }
        i = j;
    }
    event_times.reverse();
    d_vec.reverse();
    s0_vec.reverse();
    let mut s1_rev = Vec::with_capacity(s1_vec.len());
    for chunk in s1_vec.chunks(p).rev() {
        s1_rev.extend_from_slice(chunk);
    }
    RiskScan {
        event_times,
        d: d_vec,
        s0: s0_vec,
        s1: s1_rev,
    }
}

/// Multiplier-bootstrap simultaneous confidence band for the conditional
/// cumulative hazard or survival curve at covariate `z`.
///
/// Each replicate re-weights the estimated influence terms with
/// independent standard normals; the band half-width is the level-quantile
/// of the replicate sup-norms divided by sqrt(n). Survival bands are
/// clipped to [0, 1].
pub fn multiplier_confidence_band(
    data: &SurvivalDataset,
    fit: &CoxFit,
    z: &[f64],
    target: BandTarget,
    level: f64,
    replicates: usize,
    seed: u64,
    grid: &[f64],
) -> Result<Band> {
    if replicates < 100 {
        return Err(CoxError::Precondition(format!(
            "need at least 100 multiplier replicates, got {replicates}"
        )));
    }
    if z.len() != data.p() {
        return Err(CoxError::Precondition("covariate dimension mismatch".into()));
    }
    let n = data.n();
    let nf = n as f64;
    let p = data.p();
    let risk = risk_scan(data, &fit.theta);
    let m = risk.event_times.len();

    // info inverse (pseudo-solve not needed: degenerate fits get a zero
    // correction term)
    let info_inv = if fit.degenerate {
        DMatrix::zeros(p, p)
    } else {
        fit.info.clone().try_inverse().ok_or_else(|| {
            CoxError::LinearAlgebra("information matrix is singular".into())
        })?
    };

    // cumulative event-time arrays
    let mut d_lambda = vec![0.0; m]; // d_j / S0_j
    let mut cum_haz = vec![0.0; m];
    let mut zbar = vec![0.0; m * p]; // S1/S0 per event time
    let mut cum_zbar_dl = vec![0.0; m * p]; // int (S1/S0) dLambda
    let mut cum_dl_over_s0n = vec![0.0; m]; // int dLambda / (S0/n)
    let mut acc_h = 0.0;
    let mut acc_zl = vec![0.0; p];
    let mut acc_q = 0.0;
    for j in 0..m {
        d_lambda[j] = risk.d[j] / risk.s0[j];
        acc_h += d_lambda[j];
        cum_haz[j] = acc_h;
        for a in 0..p {
            zbar[j * p + a] = risk.s1[j * p + a] / risk.s0[j];
            acc_zl[a] += zbar[j * p + a] * d_lambda[j];
            cum_zbar_dl[j * p + a] = acc_zl[a];
        }
        acc_q += d_lambda[j] / (risk.s0[j] / nf);
        cum_dl_over_s0n[j] = acc_q;
    }

    // per-subject quantities
    let exp_lin: Vec<f64> = data.linear_predictor(&fit.theta).iter().map(|v| v.exp()).collect();
    // index of the last event time <= y_i
    let last_event: Vec<usize> = data
        .subjects()
        .iter()
        .map(|s| risk.event_times.partition_point(|&t| t <= s.y))
        .collect();
    // score residual U_i and its info^{-1} product
    let mut v_i = vec![0.0; n * p];
    for (i, s) in data.subjects().iter().enumerate() {
        let mut u = vec![0.0; p];
        if s.delta == 1 {
            let j = risk.event_times.partition_point(|&t| t <= s.y);
            debug_assert!(j > 0, "event subject must sit on an event time");
            for a in 0..p {
                u[a] = s.z[a] - zbar[(j - 1) * p + a];
            }
        }
        let je = last_event[i];
        if je > 0 {
            let jm = je - 1;
            for a in 0..p {
                u[a] -= exp_lin[i]
                    * (s.z[a] * cum_haz[jm] - cum_zbar_dl[jm * p + a]);
            }
        }
        for a in 0..p {
            let mut acc = 0.0;
            for b in 0..p {
                acc += info_inv[(a, b)] * u[b];
            }
            v_i[i * p + a] = acc;
        }
    }

    // A(t) = z Lambda_hat(t) - int_0^t (S1/S0) dLambda, per event time
    let mut a_fn = vec![0.0; m * p];
    for j in 0..m {
        for a in 0..p {
            a_fn[j * p + a] = z[a] * cum_haz[j] - cum_zbar_dl[j * p + a];
        }
    }

    let scale_z = dot(&fit.theta, z).exp();
    // map each grid point to the index of the last event time <= t
    let grid_event: Vec<usize> = grid
        .iter()
        .map(|&t| risk.event_times.partition_point(|&u| u <= t))
        .collect();
    let center: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let ch = fit.breslow.eval(t) * scale_z;
            match target {
                BandTarget::CumHaz => ch,
                BandTarget::Survival => (-ch).exp(),
            }
        })
        .collect();

    // subjects ordered by y descending for suffix accumulations
    let mut order_desc: Vec<usize> = (0..n).collect();
    order_desc.sort_by(|&a, &b| data.subjects()[b].y.total_cmp(&data.subjects()[a].y));

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut sups = Vec::with_capacity(replicates);
    let mut g = vec![0.0; n];
    // per-event-time accumulators reused across replicates
    let mut p_step = vec![0.0; m];
    let mut r_suffix = vec![0.0; m];
    for _ in 0..replicates {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        // P: jumps G_i delta_i / (S0(Y_i)/n) accumulated over event times
        p_step.iter_mut().for_each(|v| *v = 0.0);
        for (i, s) in data.subjects().iter().enumerate() {
            if s.delta == 1 {
                let j = last_event[i] - 1;
                p_step[j] += g[i] / (risk.s0[j] / nf);
            }
        }
        // R(u) = sum_{y_i >= u} G_i exp(theta'z_i) at each event time
        let mut acc = 0.0;
        let mut cursor = 0usize;
        for j in (0..m).rev() {
            let t = risk.event_times[j];
            while cursor < n {
                let idx = order_desc[cursor];
                if data.subjects()[idx].y >= t {
                    acc += g[idx] * exp_lin[idx];
                    cursor += 1;
                } else {
                    break;
                }
            }
            r_suffix[j] = acc;
        }
        // U_b = sum_i G_i v_i (already info^{-1}-rotated)
        let mut u_b = vec![0.0; p];
        for i in 0..n {
            for a in 0..p {
                u_b[a] += g[i] * v_i[i * p + a];
            }
        }
        // walk event times accumulating P and Q, read sup on the grid
        let mut sup: f64 = 0.0;
        let mut p_acc = 0.0;
        let mut q_acc = 0.0;
        let mut w_at_event = vec![0.0; m];
        for j in 0..m {
            p_acc += p_step[j];
            q_acc += d_lambda[j] / (risk.s0[j] / nf) * r_suffix[j] / nf;
            let mut a_term = 0.0;
            for a in 0..p {
                a_term += a_fn[j * p + a] * u_b[a];
            }
            w_at_event[j] = scale_z * (p_acc - q_acc + a_term) / nf.sqrt();
        }
        for (gi, &je) in grid_event.iter().enumerate() {
            let w = if je == 0 { 0.0 } else { w_at_event[je - 1] };
            let w = match target {
                BandTarget::CumHaz => w,
                BandTarget::Survival => -center[gi] * w,
            };
            sup = sup.max(w.abs());
        }
        sups.push(sup);
    }
    let half_width = empirical_quantile(&sups, level)? / nf.sqrt();

    let clip = matches!(target, BandTarget::Survival);
    let lower: Vec<f64> = center
        .iter()
        .map(|c| {
            let v = c - half_width;
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
            let v = c + half_width;
            if clip {
                v.min(1.0)
            } else {
                v
            }
        })
        .collect();
    Band::new(grid.to_vec(), center, lower, upper, level)
}
