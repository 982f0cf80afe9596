//! Synthetic data generation: inverse-hazard event times, standard normal
//! covariates, administrative and uniform censoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::data::{dot, Subject, SurvivalDataset};
use crate::error::{CoxError, Result};
use crate::truth::{CensoringMode, TruthSpec, T_MAX};

/// Latent event time for covariate `z` from the uniform variate `u`:
/// T = Lambda_0^{-1}(-log(u) e^{-theta0'z}), capped at the internal
/// horizon (anything past 1 is administratively censored anyway).
pub fn sample_event_time(truth: &TruthSpec, z: &[f64], u: f64) -> Result<f64> {
    EventTimeSampler::new(truth).sample(z, u)
}

/// Event-time sampler with a cached inversion table; use this when drawing
/// many times from the same truth.
pub struct EventTimeSampler<'a> {
    truth: &'a TruthSpec,
    table: crate::truth::InversionTable,
}

impl<'a> EventTimeSampler<'a> {
    pub fn new(truth: &'a TruthSpec) -> Self {
        Self {
            truth,
            table: truth.lambda0.inversion_table(),
        }
    }

    pub fn sample(&self, z: &[f64], u: f64) -> Result<f64> {
        if !(0.0 < u && u < 1.0) {
            return Err(CoxError::Domain(format!("uniform variate {u} outside (0,1)")));
        }
        let target = -u.ln() * (-dot(&self.truth.theta0, z)).exp();
        self.truth.lambda0.invert_cumulative(target, &self.table)
    }
}

/// Generate `n` subjects from `truth`. Covariates are i.i.d. standard
/// normal per coordinate; Y = min(T, C, 1) and delta = 1{T <= min(C, 1)}.
/// The draw order per subject is fixed (covariates, event uniform,
/// censoring uniform), so a seed pins the dataset bit for bit.
pub fn generate_dataset(n: usize, truth: &TruthSpec, seed: u64) -> Result<SurvivalDataset> {
    if n == 0 {
        return Err(CoxError::Precondition("n must be >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sampler = EventTimeSampler::new(truth);
    let p = truth.p();
    let mut subjects = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let t = sampler.sample(&z, u)?;
        let c = match truth.censoring {
            CensoringMode::AdminOnly => 1.0,
            CensoringMode::AdminPlusUniform => rng.random_range(0.0..1.0f64).min(1.0),
        };
        let cutoff = c.min(1.0);
        let (y, delta) = if t <= cutoff { (t, 1) } else { (cutoff, 0) };
        subjects.push(Subject::new(y, delta, z)?);
    }
    SurvivalDataset::new(subjects, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth::BaselineHazard;
    use approx::assert_relative_eq;

    fn unit_truth() -> TruthSpec {
        TruthSpec::new(
            vec![0.0],
            BaselineHazard::Tabulated { values: vec![1.0, 1.0] },
            CensoringMode::AdminOnly,
        )
        .unwrap()
    }

    #[test]
    fn unit_hazard_inverts_exponential() {
        let truth = unit_truth();
        // Lambda_0 = identity, so u = e^{-1} gives T = 1
        let t = sample_event_time(&truth, &[0.0], (-1.0f64).exp()).unwrap();
        assert_relative_eq!(t, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn smooth_a_inversion_matches_quadrature_oracle() {
        let truth = TruthSpec::new(
            vec![-0.5],
            BaselineHazard::SmoothA,
            CensoringMode::AdminOnly,
        )
        .unwrap();
        for &u in &[0.9, 0.5, 0.2, 0.05] {
            let t = sample_event_time(&truth, &[0.0], u).unwrap();
            if t < T_MAX {
                // integrate lambda_0 to t with Simpson as an independent check
                let m = 40_000;
                let dt = t / m as f64;
                let mut acc = 0.0;
                for i in 0..m {
                    let a = i as f64 * dt;
                    acc += dt / 6.0
                        * (truth.lambda0.hazard(a)
                            + 4.0 * truth.lambda0.hazard(a + 0.5 * dt)
                            + truth.lambda0.hazard(a + dt));
                }
                assert_relative_eq!(acc, -u.ln(), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rejects_degenerate_uniform() {
        let truth = unit_truth();
        assert!(sample_event_time(&truth, &[0.0], 0.0).is_err());
        assert!(sample_event_time(&truth, &[0.0], 1.0).is_err());
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        let truth = TruthSpec::new(
            vec![-0.5, 0.3],
            BaselineHazard::SmoothA,
            CensoringMode::AdminPlusUniform,
        )
        .unwrap();
        let a = generate_dataset(50, &truth, 31).unwrap();
        let b = generate_dataset(50, &truth, 31).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(50, &truth, 32).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn admin_censoring_marks_horizon() {
        let truth = TruthSpec::new(vec![0.0], BaselineHazard::SmoothA, CensoringMode::AdminOnly)
            .unwrap();
        let data = generate_dataset(500, &truth, 8).unwrap();
        for s in data.subjects() {
            assert!(s.y > 0.0 && s.y <= 1.0);
            if s.delta == 0 {
                assert_eq!(s.y, 1.0, "admin-only censoring happens at the horizon");
            }
        }
    }

    #[test]
    fn unit_hazard_censored_fraction_matches_exponential_tail() {
        // P(T > 1) = e^{-1} for unit hazard and theta0 = 0
        let truth = unit_truth();
        let data = generate_dataset(10_000, &truth, 77).unwrap();
        let frac = data.censored_fraction();
        assert!(
            (frac - (-1.0f64).exp()).abs() < 0.02,
            "censored fraction {frac} far from e^-1"
        );
    }

    #[test]
    fn larger_linear_predictor_shortens_time_on_shared_uniform() {
        let truth = TruthSpec::new(vec![1.0], BaselineHazard::SmoothB, CensoringMode::AdminOnly)
            .unwrap();
        for &u in &[0.9, 0.6, 0.3, 0.1] {
            let slow = sample_event_time(&truth, &[-1.0], u).unwrap();
            let fast = sample_event_time(&truth, &[1.0], u).unwrap();
            assert!(fast <= slow);
        }
    }
}
