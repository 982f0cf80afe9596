//! Bayesian and frequentist inference for the Cox proportional-hazards
//! model with piecewise-constant baseline hazards on dyadic grids.
//!
//! The crate provides:
//! - data simulation from named baseline hazards under administrative and
//!   uniform censoring ([`simulate`]),
//! - the Cox partial-likelihood MLE, Breslow estimator and a
//!   multiplier-bootstrap confidence band ([`frequentist`]),
//! - posterior samplers for independent-gamma, dependent-gamma and
//!   Haar-wavelet priors on the hazard ([`mcmc`]),
//! - Haar multiscale transforms and the dyadic cut-off rule
//!   ([`multiscale`]),
//! - numerical evaluation of the limiting information quantities and
//!   Gaussian limit processes used as oracles against sampler output
//!   ([`asymptotics`]),
//! - credible bands and joint credible regions ([`bands`]), and
//! - the replicated study harness behind the `coxscale` CLI ([`harness`]).

pub mod asymptotics;
pub mod bands;
pub mod data;
pub mod error;
pub mod frequentist;
pub mod harness;
pub mod hazard;
pub mod likelihood;
pub mod mcmc;
pub mod multiscale;
pub mod seed;
pub mod simulate;
pub mod stats;
pub mod truth;

pub use data::{Subject, SurvivalDataset};
pub use error::{CoxError, Result};
pub use hazard::{ExposureSummary, HistogramHazard};
pub use truth::{BaselineHazard, CensoringMode, TruthSpec};
