//! Semiparametric survival modelling for crossing survival curves.
//!
//! The Yang-Prentice model separates a short-term hazard ratio
//! `lambda = exp(z psi)` from a long-term hazard ratio `theta = exp(z phi)`:
//!
//! ```text
//! S(t | z) = [1 + (lambda / theta) R0(t)]^(-theta)
//! ```
//!
//! where `R0` is the baseline odds. This crate represents either the baseline
//! hazard or the baseline odds with a Bernstein polynomial, which gives
//! closed-form likelihoods and continuous survival curves. On top of that sit
//! maximum-likelihood fitting, a Bayesian sampler, crossing-time estimation
//! with bootstrap or posterior intervals, and a Monte Carlo study harness.
//!
//! ```
//! use ypbp::{simulation, fit_ml, FitConfig, Variant};
//!
//! let design = simulation::SimulationDesign::scenario_i(200);
//! let nu = simulation::tune_censoring_bound(&design, 0.3, 11).unwrap();
//! let data = simulation::generate_dataset(&design, nu, 7, 0).unwrap();
//! let fit = fit_ml(&data, &FitConfig::new(Variant::M1)).unwrap();
//! assert!(fit.converged());
//! ```

// negated comparisons are NaN guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod bernstein;
pub mod crossing;
pub mod data;
mod error;
pub mod fit;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod rng;
pub mod simulation;
pub mod special;
#[cfg(test)]
mod testing;

pub use bayes::{hpd_interval, sample_posterior, PosteriorSample, PriorSpec, SamplerConfig};
pub use bernstein::{default_degree, BaselineCoefficients, BaselineKind, BpApproximation, BpBasis};
pub use crossing::{
    bootstrap_crossing, crossing_time, posterior_crossing, survival_curve_grid, BootstrapConfig, CrossingEstimate,
    CrossingMethod, CrossingQuery,
};
pub use data::SurvivalDataset;
pub use error::{Error, Result};
pub use fit::{fit_ml, wald_interval, FitConfig, FitResult, FitStatus, Interval};
pub use likelihood::{log_likelihood, log_likelihood_gradient, Likelihood, ParameterLayout};
pub use model::{Baseline, CovariateRow, RatioPair, Variant, YpParameters};
