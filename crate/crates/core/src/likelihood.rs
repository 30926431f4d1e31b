//! Exact right-censored log-likelihood for the four model variants.
//!
//! Parameters are optimised on an unconstrained vector laid out as
//! `[psi (q), phi (q), beta (p), ln c (m)]`, where `c` are the Bernstein
//! coefficients. Basis values at the observed times depend only on the data
//! and the basis, so [`Likelihood`] evaluates them once up front; each
//! evaluation is then a pass of dot products over the rows.

use std::ops::Range;

use crate::bernstein::{BaselineCoefficients, BaselineKind, BpBasis};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::model::{log_odds_from_pair, Baseline, Variant, YpParameters};
use crate::numeric::{logistic, softplus};

/// Position of each parameter block in the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    pub q: usize,
    pub p: usize,
    pub m: usize,
    pub kind: BaselineKind,
}

impl ParameterLayout {
    pub fn dim(&self) -> usize {
        2 * self.q + self.p + self.m
    }

    pub fn psi(&self) -> Range<usize> {
        0..self.q
    }

    pub fn phi(&self) -> Range<usize> {
        self.q..2 * self.q
    }

    pub fn beta(&self) -> Range<usize> {
        2 * self.q..2 * self.q + self.p
    }

    pub fn baseline(&self) -> Range<usize> {
        2 * self.q + self.p..self.dim()
    }

    /// Number of regression coefficients (`psi`, `phi`, `beta`).
    pub fn regression_len(&self) -> usize {
        2 * self.q + self.p
    }

    pub fn variant(&self) -> Variant {
        Variant::from_parts(self.kind, self.p > 0)
    }

    /// Parameter labels in layout order, e.g. `psi[z_trt]`, `gamma[3]`.
    pub fn labels(&self, z_names: &[String], x_names: &[String]) -> Vec<String> {
        let coef = match self.kind {
            BaselineKind::Hazard => "gamma",
            BaselineKind::Odds => "xi",
        };
        let mut out = Vec::with_capacity(self.dim());
        out.extend(z_names.iter().map(|n| format!("psi[{n}]")));
        out.extend(z_names.iter().map(|n| format!("phi[{n}]")));
        out.extend(x_names.iter().map(|n| format!("beta[{n}]")));
        out.extend((1..=self.m).map(|k| format!("{coef}[{k}]")));
        out
    }

    /// Unconstrained vector to natural scale (baseline coefficients exponentiated).
    pub fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        for v in &mut out[self.baseline()] {
            *v = v.exp();
        }
        out
    }

    pub fn to_params(&self, theta: &[f64], basis: BpBasis) -> Result<YpParameters> {
        if theta.len() != self.dim() {
            return Err(Error::dim(format!(
                "parameter vector has {} entries, layout needs {}",
                theta.len(),
                self.dim()
            )));
        }
        let coefs = theta[self.baseline()].iter().map(|v| v.exp()).collect();
        let baseline = Baseline::new(basis, BaselineCoefficients::new(self.kind, coefs)?)?;
        YpParameters::new(theta[self.psi()].to_vec(), theta[self.phi()].to_vec(), theta[self.beta()].to_vec(), baseline)
    }

    pub fn from_params(params: &YpParameters) -> (Self, Vec<f64>) {
        let layout = ParameterLayout {
            q: params.q(),
            p: params.p(),
            m: params.baseline().basis().degree(),
            kind: params.baseline().kind(),
        };
        let mut theta = Vec::with_capacity(layout.dim());
        theta.extend_from_slice(params.psi());
        theta.extend_from_slice(params.phi());
        theta.extend_from_slice(params.beta());
        theta.extend(params.baseline().coefficients().values().iter().map(|c| c.ln()));
        (layout, theta)
    }
}

/// Log-likelihood of a dataset under one variant and basis, with the basis
/// values at every observed time cached.
#[derive(Debug, Clone)]
pub struct Likelihood {
    layout: ParameterLayout,
    basis: BpBasis,
    rows: usize,
    z: Vec<f64>,
    x: Vec<f64>,
    events: Vec<bool>,
    weights: Vec<f64>,
    density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Likelihood {
    pub fn new(data: &SurvivalDataset, variant: Variant, basis: BpBasis) -> Result<Self> {
        let rows: Vec<(usize, f64)> = (0..data.n()).map(|i| (i, 1.0)).collect();
        Self::weighted(data, variant, basis, &rows)
    }

    /// Likelihood over selected rows with multiplicities, which is how a
    /// bootstrap resample is evaluated without duplicating rows.
    pub fn weighted(data: &SurvivalDataset, variant: Variant, basis: BpBasis, rows: &[(usize, f64)]) -> Result<Self> {
        if !variant.has_constant_block() && data.p() > 0 {
            return Err(Error::dim(format!(
                "variant {variant} has no constant-effect block but the data has {} x columns",
                data.p()
            )));
        }
        if !rows.iter().any(|&(i, w)| w > 0.0 && data.events()[i]) {
            return Err(Error::InvalidData("likelihood needs at least one event".into()));
        }
        let layout = ParameterLayout { q: data.q(), p: data.p(), m: basis.degree(), kind: variant.baseline_kind() };
        let m = layout.m;
        let count = rows.len();
        let mut lik = Likelihood {
            layout,
            basis,
            rows: count,
            z: Vec::with_capacity(count * layout.q),
            x: Vec::with_capacity(count * layout.p),
            events: Vec::with_capacity(count),
            weights: Vec::with_capacity(count),
            density: vec![0.0; count * m],
            cumulative: vec![0.0; count * m],
        };
        for (r, &(i, w)) in rows.iter().enumerate() {
            lik.z.extend_from_slice(data.z_row(i));
            lik.x.extend_from_slice(data.x_row(i));
            lik.events.push(data.events()[i]);
            lik.weights.push(w);
            basis.fill_row(
                data.times()[i],
                &mut lik.density[r * m..(r + 1) * m],
                &mut lik.cumulative[r * m..(r + 1) * m],
            )?;
        }
        Ok(lik)
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn basis(&self) -> BpBasis {
        self.basis
    }

    /// Sum of row weights (the sample size for an unweighted likelihood).
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn check(&self, theta: &[f64]) {
        assert_eq!(theta.len(), self.layout.dim(), "parameter vector length does not match layout");
    }

    fn predictors(&self, r: usize, theta: &[f64]) -> (f64, f64, f64) {
        let l = &self.layout;
        let z = &self.z[r * l.q..(r + 1) * l.q];
        let x = &self.x[r * l.p..(r + 1) * l.p];
        let mut short = 0.0;
        let mut long = 0.0;
        for (j, zj) in z.iter().enumerate() {
            short += zj * theta[j];
            long += zj * theta[l.q + j];
        }
        let constant: f64 = x.iter().zip(&theta[l.beta()]).map(|(a, b)| a * b).sum();
        (short, long, constant)
    }

    fn pair(&self, r: usize, coefs: &[f64]) -> (f64, f64) {
        let m = self.layout.m;
        let g = &self.density[r * m..(r + 1) * m];
        let cg = &self.cumulative[r * m..(r + 1) * m];
        let mut dens = 0.0;
        let mut cum = 0.0;
        for k in 0..m {
            dens += coefs[k] * g[k];
            cum += coefs[k] * cg[k];
        }
        (dens, cum)
    }

    /// Log-likelihood at an unconstrained parameter vector. May be `-inf`
    /// (an event where the hazard vanishes) or NaN for wild inputs.
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.check(theta);
        let coefs: Vec<f64> = theta[self.layout.baseline()].iter().map(|v| v.exp()).collect();
        let mut total = 0.0;
        for r in 0..self.rows {
            let (short, long, constant) = self.predictors(r, theta);
            let (dens, cum) = self.pair(r, &coefs);
            total +=
                self.weights[r] * row_terms(self.layout.kind, self.events[r], short, long, constant, dens, cum).value;
        }
        total
    }

    /// Log-likelihood and its analytic gradient with respect to the
    /// unconstrained vector.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.check(theta);
        assert_eq!(grad.len(), theta.len());
        let l = self.layout;
        let m = l.m;
        grad.fill(0.0);
        let coefs: Vec<f64> = theta[l.baseline()].iter().map(|v| v.exp()).collect();
        // per-k accumulators for d/dc_k before the chain rule through ln c_k
        let mut acc_cum = vec![0.0; m];
        let mut acc_dens = vec![0.0; m];
        let mut total = 0.0;

        for r in 0..self.rows {
            let w = self.weights[r];
            let (short, long, constant) = self.predictors(r, theta);
            let (dens, cum) = self.pair(r, &coefs);
            let t = row_terms(l.kind, self.events[r], short, long, constant, dens, cum);
            total += w * t.value;

            let z = &self.z[r * l.q..(r + 1) * l.q];
            for (j, zj) in z.iter().enumerate() {
                grad[j] += w * t.d_short * zj;
                grad[l.q + j] += w * t.d_long * zj;
            }
            let x = &self.x[r * l.p..(r + 1) * l.p];
            let beta_start = 2 * l.q;
            for (j, xj) in x.iter().enumerate() {
                grad[beta_start + j] += w * t.d_const * xj;
            }

            let g = &self.density[r * m..(r + 1) * m];
            let cg = &self.cumulative[r * m..(r + 1) * m];
            for k in 0..m {
                acc_dens[k] += w * t.d_dens * g[k];
                acc_cum[k] += w * t.d_cum * cg[k];
            }
        }
        let base = l.baseline().start;
        for k in 0..m {
            grad[base + k] = coefs[k] * (acc_dens[k] + acc_cum[k]);
        }
        total
    }
}

/// One row's log-likelihood contribution and its partial derivatives with
/// respect to the three linear predictors and the Bernstein pair
/// `(c.g, c.G)`.
struct RowTerms {
    value: f64,
    d_short: f64,
    d_long: f64,
    d_const: f64,
    d_dens: f64,
    d_cum: f64,
}

#[inline]
fn row_terms(kind: BaselineKind, event: bool, short: f64, long: f64, constant: f64, dens: f64, cum: f64) -> RowTerms {
    let delta = if event { 1.0 } else { 0.0 };
    let omega = (long + constant).exp();
    // direct odds when they are representable, log scale otherwise
    let ratio = (short - long).exp();
    let r0 = match kind {
        BaselineKind::Hazard if cum <= 700.0 => cum.exp_m1(),
        BaselineKind::Hazard => f64::INFINITY,
        BaselineKind::Odds => cum,
    };
    let u = ratio * r0;
    if !u.is_finite() {
        return row_terms_log(kind, event, short, long, constant, dens, cum);
    }
    let d_r0 = -(delta + omega) * ratio / (1.0 + u);
    let d_cum = match kind {
        BaselineKind::Hazard => d_r0 * (1.0 + r0),
        BaselineKind::Odds => d_r0,
    };
    finish_row(kind, event, short, constant, omega, dens, cum, u.ln_1p(), u / (1.0 + u), d_cum)
}

/// Same as [`row_terms`] but entirely on the log-odds scale.
fn row_terms_log(
    kind: BaselineKind,
    event: bool,
    short: f64,
    long: f64,
    constant: f64,
    dens: f64,
    cum: f64,
) -> RowTerms {
    let delta = if event { 1.0 } else { 0.0 };
    let omega = (long + constant).exp();
    let (log_r0, _) = log_odds_from_pair(kind, dens, cum);
    let a = short - long + log_r0;
    let sig = logistic(a);
    let d_log_r0 = -(delta + omega) * sig;
    let d_cum = match kind {
        BaselineKind::Hazard => d_log_r0 / -(-cum).exp_m1(),
        BaselineKind::Odds => d_log_r0 / cum,
    };
    finish_row(kind, event, short, constant, omega, dens, cum, softplus(a), sig, d_cum)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn finish_row(
    kind: BaselineKind,
    event: bool,
    short: f64,
    constant: f64,
    omega: f64,
    dens: f64,
    cum: f64,
    sp: f64,
    sig: f64,
    d_cum: f64,
) -> RowTerms {
    let delta = if event { 1.0 } else { 0.0 };
    let mut value = -omega * sp;
    let mut d_cum = d_cum;
    let mut d_dens = 0.0;
    if event {
        let log_dr0 = match kind {
            BaselineKind::Hazard => dens.ln() + cum,
            BaselineKind::Odds => dens.ln(),
        };
        value += short + constant + log_dr0 - sp;
        d_dens = 1.0 / dens;
        if kind == BaselineKind::Hazard {
            d_cum += 1.0;
        }
    }
    RowTerms {
        value,
        d_short: delta * (1.0 - sig) - omega * sig,
        d_long: delta * sig - omega * (sp - sig),
        d_const: delta - omega * sp,
        d_dens,
        d_cum,
    }
}

fn likelihood_for(params: &YpParameters, data: &SurvivalDataset) -> Result<(Likelihood, Vec<f64>)> {
    if params.q() != data.q() || params.p() != data.p() {
        return Err(Error::dim(format!(
            "parameters have (q={}, p={}) but data has (q={}, p={})",
            params.q(),
            params.p(),
            data.q(),
            data.p()
        )));
    }
    let (layout, theta) = ParameterLayout::from_params(params);
    let variant = Variant::from_parts(layout.kind, data.p() > 0);
    let lik = Likelihood::new(data, variant, *params.baseline().basis())?;
    Ok((lik, theta))
}

/// Log-likelihood of `params` on `data`.
pub fn log_likelihood(params: &YpParameters, data: &SurvivalDataset) -> Result<f64> {
    let (lik, theta) = likelihood_for(params, data)?;
    Ok(lik.value(&theta))
}

/// Gradient with respect to the unconstrained parameterization (regression
/// coefficients as-is, baseline coefficients on the log scale).
pub fn log_likelihood_gradient(params: &YpParameters, data: &SurvivalDataset) -> Result<Vec<f64>> {
    let (lik, theta) = likelihood_for(params, data)?;
    let mut grad = vec![0.0; theta.len()];
    let value = lik.value_and_gradient(&theta, &mut grad);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(grad)
}
