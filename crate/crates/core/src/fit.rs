//! Maximum-likelihood fitting with observed-information standard errors.

use nalgebra::DMatrix;

use crate::bernstein::{default_degree, BaselineKind, BpBasis};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::likelihood::{Likelihood, ParameterLayout};
use crate::model::{Variant, YpParameters};
use crate::numeric::normal_quantile;
use crate::optim::{minimize, BfgsConfig, Termination};

/// Condition numbers of the observed information above this are reported as
/// ill-conditioned.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// Baseline coefficients smaller than the largest one by more than this
/// factor (on the log scale) are treated as zero when computing the covariance.
const POLISH_STEPS: usize = 100;

const ZERO_COEFFICIENT_LOG_RATIO: f64 = 18.420680743952367; // ln(1e8)

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub variant: Variant,
    /// Bernstein degree; `None` picks [`default_degree`] from the sample size.
    pub degree: Option<usize>,
    /// Scaled gradient tolerance, `max|g| / max(1, |loglik|)`.
    pub tolerance: f64,
    pub relative_tolerance: f64,
    pub max_iter: usize,
    /// Starting point on the unconstrained scale (log baseline coefficients).
    pub initial_point: Option<Vec<f64>>,
    /// Starting inverse-Hessian guess for the optimiser.
    pub initial_inverse_hessian: Option<DMatrix<f64>>,
    /// Skip the numerical Hessian, and the Newton polish that relies on it,
    /// when only point estimates are needed.
    pub compute_covariance: bool,
}

impl FitConfig {
    pub fn new(variant: Variant) -> Self {
        FitConfig {
            variant,
            degree: None,
            tolerance: 1e-6,
            relative_tolerance: 1e-10,
            max_iter: 500,
            initial_point: None,
            initial_inverse_hessian: None,
            compute_covariance: true,
        }
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = Some(degree);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.degree == Some(0) {
            return Err(Error::config("degree must be at least 1"));
        }
        if !(self.tolerance > 0.0) || self.relative_tolerance < 0.0 {
            return Err(Error::config("tolerances must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitStatus {
    Converged,
    /// Stopped on a small objective change or iteration cap with the
    /// gradient still above tolerance.
    NotConverged,
    /// Optimum found but the observed information is singular or nearly so.
    IllConditioned {
        condition_number: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    variant: Variant,
    layout: ParameterLayout,
    basis: BpBasis,
    labels: Vec<String>,
    unconstrained: Vec<f64>,
    estimates: Vec<f64>,
    covariance_unconstrained: Option<DMatrix<f64>>,
    covariance: Option<DMatrix<f64>>,
    loglik: f64,
    status: FitStatus,
    iterations: usize,
    gradient_norm: f64,
    condition_number: Option<f64>,
    boundary: Vec<usize>,
}

impl FitResult {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn basis(&self) -> BpBasis {
        self.basis
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Estimates on the natural scale: `psi, phi, beta, baseline coefficients`.
    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    /// Estimates on the optimisation scale (log baseline coefficients).
    pub fn unconstrained(&self) -> &[f64] {
        &self.unconstrained
    }

    pub fn psi(&self) -> &[f64] {
        &self.estimates[self.layout.psi()]
    }

    pub fn phi(&self) -> &[f64] {
        &self.estimates[self.layout.phi()]
    }

    pub fn beta(&self) -> &[f64] {
        &self.estimates[self.layout.beta()]
    }

    /// Natural-scale covariance (delta method for the baseline block).
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref()
    }

    pub fn covariance_unconstrained(&self) -> Option<&DMatrix<f64>> {
        self.covariance_unconstrained.as_ref()
    }

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.covariance.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn status(&self) -> FitStatus {
        self.status
    }

    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `max|gradient| / max(1, |loglik|)` at the returned point.
    pub fn gradient_norm(&self) -> f64 {
        self.gradient_norm
    }

    pub fn condition_number(&self) -> Option<f64> {
        self.condition_number
    }

    /// Baseline coefficients (layout indices) treated as sitting on the zero
    /// boundary: held fixed in the covariance, with zero variance.
    pub fn boundary_coefficients(&self) -> &[usize] {
        &self.boundary
    }

    pub fn params(&self) -> Result<YpParameters> {
        self.layout.to_params(&self.unconstrained, self.basis)
    }

    /// Wald interval `estimate ± z * se` per natural-scale coordinate.
    pub fn wald_intervals(&self, level: f64) -> Result<Vec<Interval>> {
        wald_interval(self, level)
    }
}

/// Per-parameter Wald intervals on the natural scale.
pub fn wald_interval(fit: &FitResult, level: f64) -> Result<Vec<Interval>> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::domain(format!("interval level {level} is outside [0, 1)")));
    }
    if let FitStatus::IllConditioned { condition_number } = fit.status {
        return Err(Error::IllConditioned { condition_number });
    }
    let se = fit.standard_errors().ok_or(Error::IllConditioned { condition_number: f64::INFINITY })?;
    Ok(fit.estimates.iter().zip(&se).map(|(&est, &s)| wald_bounds(est, s, level)).collect())
}

/// `est ± z_{(1+level)/2} * se`.
pub fn wald_bounds(est: f64, se: f64, level: f64) -> Interval {
    let z = if level == 0.0 { 0.0 } else { normal_quantile(0.5 * (1.0 + level)) };
    Interval { lower: est - z * se, upper: est + z * se }
}

/// Data prepared for a variant: the original formulation moves any `x`
/// columns into `z`.
pub(crate) fn data_for_variant(
    data: &SurvivalDataset,
    variant: Variant,
) -> Result<std::borrow::Cow<'_, SurvivalDataset>> {
    if variant.has_constant_block() {
        if data.p() == 0 {
            return Err(Error::config(format!("variant {variant} needs constant-effect (x) columns")));
        }
        Ok(std::borrow::Cow::Borrowed(data))
    } else if data.p() > 0 {
        Ok(std::borrow::Cow::Owned(data.merge_constant_block()))
    } else {
        Ok(std::borrow::Cow::Borrowed(data))
    }
}

pub(crate) fn basis_for(data: &SurvivalDataset, config: &FitConfig) -> Result<BpBasis> {
    BpBasis::new(config.degree.unwrap_or_else(|| default_degree(data.n())), data.tau_hat())
}

/// Starting point: zero regression coefficients and a flat baseline whose
/// cumulative hazard at the horizon matches the Nelson-Aalen estimate.
pub fn initial_point(data: &SurvivalDataset, layout: &ParameterLayout) -> Vec<f64> {
    let total = data.nelson_aalen(data.tau_hat()).max(1e-3);
    let per = match layout.kind {
        BaselineKind::Hazard => total / layout.m as f64,
        BaselineKind::Odds => total.exp_m1() / layout.m as f64,
    };
    let mut theta = vec![0.0; layout.dim()];
    for v in &mut theta[layout.baseline()] {
        *v = per.ln();
    }
    theta
}

/// Fit by maximising the exact log-likelihood.
pub fn fit_ml(data: &SurvivalDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let data = data_for_variant(data, config.variant)?;
    let basis = basis_for(&data, config)?;
    let lik = Likelihood::new(&data, config.variant, basis)?;
    let init = match &config.initial_point {
        Some(p) => p.clone(),
        None => initial_point(&data, lik.layout()),
    };
    let labels = lik.layout().labels(data.z_names(), data.x_names());
    fit_likelihood(&lik, init, labels, config)
}

pub(crate) fn fit_likelihood(
    lik: &Likelihood,
    init: Vec<f64>,
    labels: Vec<String>,
    config: &FitConfig,
) -> Result<FitResult> {
    let layout = *lik.layout();
    if init.len() != layout.dim() {
        return Err(Error::dim(format!("initial point has {} entries, model needs {}", init.len(), layout.dim())));
    }
    let bfgs = BfgsConfig {
        max_iter: config.max_iter,
        grad_tol: config.tolerance,
        rel_tol: config.relative_tolerance,
        initial_inverse_hessian: config.initial_inverse_hessian.clone(),
    };
    let objective = |theta: &[f64], grad: &mut [f64]| {
        let v = lik.value_and_gradient(theta, grad);
        for g in grad.iter_mut() {
            *g = -*g;
        }
        -v
    };
    let out = minimize(objective, &init, &bfgs)?;
    let mut gradient_norm = out.scaled_gradient();
    let mut theta = out.x;
    let mut loglik = -out.value;
    let grad: Vec<f64> = out.gradient.iter().map(|g| -g).collect();
    if config.compute_covariance && gradient_norm > config.tolerance && out.termination != Termination::MaxIterations {
        (theta, loglik, _, gradient_norm) = newton_polish(lik, theta, loglik, grad, config.tolerance);
    }
    let mut status = if gradient_norm <= config.tolerance { FitStatus::Converged } else { FitStatus::NotConverged };

    let mut covariance_unconstrained = None;
    let mut covariance = None;
    let mut condition_number = None;
    let mut fixed = Vec::new();
    if config.compute_covariance {
        let info = observed_information(lik, &theta);
        match constrained_inverse(&info, &layout, &theta) {
            Ok((inv, cond, held)) => {
                condition_number = Some(cond);
                let natural = delta_method(&layout, &theta, &inv);
                covariance_unconstrained = Some(inv);
                covariance = Some(natural);
                fixed = held;
            }
            Err(cond) => {
                condition_number = Some(cond);
                status = FitStatus::IllConditioned { condition_number: cond };
            }
        }
    }
    Ok(FitResult {
        variant: layout.variant(),
        layout,
        basis: lik.basis(),
        labels,
        estimates: layout.to_natural(&theta),
        unconstrained: theta,
        covariance_unconstrained,
        covariance,
        loglik,
        status,
        iterations: out.iterations,
        gradient_norm,
        condition_number,
        boundary: fixed,
    })
}

fn scaled_gradient(grad: &[f64], value: f64) -> f64 {
    grad.iter().fold(0.0f64, |a, g| a.max(g.abs())) / value.abs().max(1.0)
}

/// A few safeguarded Newton steps, for when quasi-Newton stalls on a small objective change just
/// short of the gradient tolerance.
fn newton_polish(
    lik: &Likelihood,
    mut theta: Vec<f64>,
    mut value: f64,
    mut grad: Vec<f64>,
    tol: f64,
) -> (Vec<f64>, f64, Vec<f64>, f64) {
    let d = theta.len();
    let mut trial_grad = vec![0.0; d];
    for _ in 0..POLISH_STEPS {
        if scaled_gradient(&grad, value) <= tol {
            break;
        }
        let info = observed_information(lik, &theta);
        if info.iter().any(|v| !v.is_finite()) {
            break;
        }
        // Newton step with curvature floored so flat and negative directions
        // still get a bounded ascent step
        let eig = info.symmetric_eigen();
        let floor = eig.eigenvalues.amax().max(1.0) * 1e-8;
        let g = nalgebra::DVector::from_column_slice(&grad);
        let mut step = nalgebra::DVector::zeros(d);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            step += v * (v.dot(&g) / lam.max(floor));
        }
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        if !(slope > 0.0) {
            break;
        }
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let v = lik.value_and_gradient(&trial, &mut trial_grad);
            if v.is_finite() && v >= value + 1e-4 * scale * slope {
                theta = trial;
                value = v;
                grad.copy_from_slice(&trial_grad);
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let norm = scaled_gradient(&grad, value);
    (theta, value, grad, norm)
}

/// Negative Hessian of the log-likelihood by central differences of the
/// analytic gradient, symmetrised.
pub fn observed_information(lik: &Likelihood, theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let mut info = DMatrix::zeros(d, d);
    let mut up = vec![0.0; d];
    let mut dn = vec![0.0; d];
    let mut point = theta.to_vec();
    for j in 0..d {
        let h = 1e-5 * (1.0 + theta[j].abs());
        point[j] = theta[j] + h;
        lik.value_and_gradient(&point, &mut up);
        point[j] = theta[j] - h;
        lik.value_and_gradient(&point, &mut dn);
        point[j] = theta[j];
        for i in 0..d {
            info[(i, j)] = -(up[i] - dn[i]) / (2.0 * h);
        }
    }
    (&info + info.transpose()) * 0.5
}

/// Inverse of a symmetric information matrix with its condition number, or
/// the condition number when it is not safely positive definite.
fn invert_information(info: &DMatrix<f64>) -> std::result::Result<(DMatrix<f64>, f64), f64> {
    if info.iter().any(|v| !v.is_finite()) {
        return Err(f64::INFINITY);
    }
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(f64::INFINITY);
    }
    let cond = max / min;
    if cond > MAX_CONDITION_NUMBER {
        return Err(cond);
    }
    let mut inv = DMatrix::zeros(info.nrows(), info.ncols());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        inv += v * v.transpose() / lam;
    }
    Ok(((&inv + inv.transpose()) * 0.5, cond))
}

/// Covariance with baseline coefficients on the zero boundary held fixed.
///
/// Coefficients driven to zero leave flat directions on the log scale. The
/// smallest baseline coefficients are held fixed one at a time until the
/// information for the rest is positive definite and well conditioned;
/// held coordinates get zero rows and columns. Fails with the condition
/// number when even the regression block alone is singular.
fn constrained_inverse(
    info: &DMatrix<f64>,
    layout: &ParameterLayout,
    theta: &[f64],
) -> std::result::Result<(DMatrix<f64>, f64, Vec<usize>), f64> {
    let d = layout.dim();
    let mut order: Vec<usize> = layout.baseline().collect();
    order.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]));
    // numerically zero coefficients are held from the start
    let largest = layout.baseline().map(|i| theta[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut held: Vec<usize> =
        order.iter().copied().filter(|&i| theta[i] < largest - ZERO_COEFFICIENT_LOG_RATIO).collect();
    held.truncate(order.len() - 1);
    let mut first_cond = None;
    loop {
        let free: Vec<usize> = (0..d).filter(|i| !held.contains(i)).collect();
        let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| info[(free[i], free[j])]);
        match invert_information(&sub) {
            Ok((inv, cond)) => {
                let mut full = DMatrix::zeros(d, d);
                for (a, &i) in free.iter().enumerate() {
                    for (b, &j) in free.iter().enumerate() {
                        full[(i, j)] = inv[(a, b)];
                    }
                }
                held.sort_unstable();
                return Ok((full, cond, held));
            }
            Err(cond) => {
                first_cond.get_or_insert(cond);
                // keep at least one baseline coefficient free
                if held.len() + 1 >= order.len() {
                    return Err(first_cond.unwrap_or(cond));
                }
                held.push(order[held.len()]);
            }
        }
    }
}

fn delta_method(layout: &ParameterLayout, theta: &[f64], cov: &DMatrix<f64>) -> DMatrix<f64> {
    let mut jac = vec![1.0; layout.dim()];
    for i in layout.baseline() {
        jac[i] = theta[i].exp();
    }
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| jac[i] * cov[(i, j)] * jac[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_bounds_example() {
        let iv = wald_bounds(1.23, 0.18, 0.95);
        assert!((iv.lower - 0.8772).abs() < 5e-5 && (iv.upper - 1.5828).abs() < 5e-5, "{iv:?}");
        assert!(((iv.upper - 1.23) - (1.23 - iv.lower)).abs() < 1e-15);
        let zero = wald_bounds(1.23, 0.18, 0.0);
        assert_eq!((zero.lower, zero.upper), (1.23, 1.23));
    }

    fn two_group(n: usize) -> SurvivalDataset {
        // deterministic exponential-like times with a group effect
        let mut times = Vec::new();
        let mut events = Vec::new();
        let mut z = Vec::new();
        for i in 0..n {
            let g = (i % 2) as f64;
            let u = (i as f64 + 0.5) / n as f64;
            let u = (u * 7919.0).fract().max(1e-3);
            let rate = if g == 1.0 { 0.5 } else { 0.2 };
            let t = -u.ln() / rate;
            events.push(t < 8.0);
            times.push(t.min(8.0));
            z.push(vec![g]);
        }
        SurvivalDataset::new(times, events, z, vec![]).unwrap()
    }

    #[test]
    fn fits_two_group_data() {
        let data = two_group(300);
        for variant in [Variant::M1, Variant::M2] {
            let fit = fit_ml(&data, &FitConfig::new(variant).with_degree(5)).unwrap();
            assert!(fit.converged(), "{variant}: {:?} grad {}", fit.status(), fit.gradient_norm());
            assert!(fit.gradient_norm() <= 1e-6);
            let cov = fit.covariance().unwrap();
            for i in 0..cov.nrows() {
                for j in 0..cov.ncols() {
                    assert!((cov[(i, j)] - cov[(j, i)]).abs() < 1e-12);
                }
                assert!(cov[(i, i)] >= 0.0);
            }
            let ivs = fit.wald_intervals(0.95).unwrap();
            assert_eq!(ivs.len(), fit.estimates().len());
        }
    }

    #[test]
    fn all_zero_covariate_is_ill_conditioned() {
        let data = two_group(100);
        let zeros =
            SurvivalDataset::new(data.times().to_vec(), data.events().to_vec(), vec![vec![0.0]; data.n()], vec![])
                .unwrap();
        let fit = fit_ml(&zeros, &FitConfig::new(Variant::M1).with_degree(5)).unwrap();
        assert!(matches!(fit.status(), FitStatus::IllConditioned { .. }));
        assert!(matches!(fit.wald_intervals(0.95), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn constant_block_variants_need_x() {
        let data = two_group(50);
        assert!(matches!(fit_ml(&data, &FitConfig::new(Variant::M1Star)), Err(Error::Config(_))));
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let data = two_group(200);
        let cfg = FitConfig::new(Variant::M1).with_degree(5);
        let cold = fit_ml(&data, &cfg).unwrap();
        let warm_cfg = FitConfig {
            initial_point: Some(cold.unconstrained().to_vec()),
            initial_inverse_hessian: cold.covariance_unconstrained().cloned(),
            ..cfg
        };
        let warm = fit_ml(&data, &warm_cfg).unwrap();
        assert!(warm.iterations() <= 2);
        assert!((warm.loglik() - cold.loglik()).abs() < 1e-8);
    }
}
