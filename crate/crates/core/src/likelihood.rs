//! Cox log-likelihood for a histogram baseline hazard, up to the
//! censoring-density terms that cancel from every ratio.

use crate::data::{dot, SurvivalDataset};
use crate::error::{CoxError, Result};
use crate::hazard::{ExposureSummary, HistogramHazard};

/// sum_i delta_i (theta'z_i + log lambda(y_i)) - Lambda(y_i) exp(theta'z_i).
///
/// Computed subject by subject; the samplers use the sufficient-statistic
/// form in [`log_likelihood_suffstat`], which this must agree with.
pub fn log_likelihood(
    data: &SurvivalDataset,
    theta: &[f64],
    hazard: &HistogramHazard,
) -> Result<f64> {
    if data.p() != theta.len() {
        return Err(CoxError::Domain(format!(
            "theta dimension {} does not match covariate dimension {}",
            theta.len(),
            data.p()
        )));
    }
    let mut acc = 0.0;
    for s in data.subjects() {
        let lin = dot(theta, &s.z);
        if s.delta == 1 {
            acc += lin + hazard.hazard(s.y)?.ln();
        }
        acc -= hazard.cumulative(s.y)? * lin.exp();
    }
    Ok(acc)
}

/// Same quantity from sufficient statistics:
/// sum_i delta_i theta'z_i + sum_k d_k log lambda_k - lambda_k T_k(theta).
pub fn log_likelihood_suffstat(
    data: &SurvivalDataset,
    theta: &[f64],
    hazard: &HistogramHazard,
    summary: &ExposureSummary,
) -> Result<f64> {
    if summary.level() != hazard.level() {
        return Err(CoxError::Domain(
            "exposure summary level does not match hazard level".into(),
        ));
    }
    let weights: Vec<f64> = data.linear_predictor(theta).iter().map(|v| v.exp()).collect();
    let mut t_k = Vec::new();
    summary.weighted_exposure(&weights, &mut t_k);
    let mut acc = 0.0;
    for (s, lin) in data.subjects().iter().zip(data.linear_predictor(theta)) {
        if s.delta == 1 {
            acc += lin;
        }
    }
    for (k, h) in hazard.heights().iter().enumerate() {
        acc += summary.events()[k] * h.ln() - h * t_k[k];
    }
    Ok(acc)
}
