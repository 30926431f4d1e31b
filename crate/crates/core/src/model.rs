//! Yang-Prentice survival, hazard and density evaluation.
//!
//! Everything is computed from two baseline quantities on the log scale,
//! `ln R0(t)` and `ln R0'(t)`, which keeps the hazard-based and odds-based
//! variants on one code path and avoids `0/0` once `S0` underflows:
//!
//! ```text
//! ln S(t|z,x) = -theta e^{x beta} ln(1 + (lambda/theta) R0(t))
//! ln h(t|z,x) = ln theta + x beta + ln R0'(t) - ln(1 + (theta/lambda) R0(t))
//! ```

use std::fmt;
use std::str::FromStr;

use crate::bernstein::{BaselineCoefficients, BaselineKind, BpBasis};
use crate::error::{Error, Result};
use crate::numeric::{log_expm1, softplus};

/// Largest magnitude accepted for a linear predictor before `exp` leaves the
/// representable range.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

/// The four model configurations: Bernstein hazard (M1) or Bernstein odds
/// (M2) baseline, each with or without a constant-effect covariate block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    M1,
    M2,
    M1Star,
    M2Star,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::M1, Variant::M2, Variant::M1Star, Variant::M2Star];

    pub fn baseline_kind(self) -> BaselineKind {
        match self {
            Variant::M1 | Variant::M1Star => BaselineKind::Hazard,
            Variant::M2 | Variant::M2Star => BaselineKind::Odds,
        }
    }

    pub fn has_constant_block(self) -> bool {
        matches!(self, Variant::M1Star | Variant::M2Star)
    }

    pub fn from_parts(kind: BaselineKind, constant_block: bool) -> Self {
        match (kind, constant_block) {
            (BaselineKind::Hazard, false) => Variant::M1,
            (BaselineKind::Odds, false) => Variant::M2,
            (BaselineKind::Hazard, true) => Variant::M1Star,
            (BaselineKind::Odds, true) => Variant::M2Star,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::M1Star => "m1-star",
            Variant::M2Star => "m2-star",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Variant::M1),
            "m2" => Ok(Variant::M2),
            "m1-star" | "m1*" => Ok(Variant::M1Star),
            "m2-star" | "m2*" => Ok(Variant::M2Star),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Baseline hazard or baseline odds represented on a Bernstein basis with the
/// constant-hazard tail past the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    basis: BpBasis,
    coefficients: BaselineCoefficients,
}

/// All baseline functions at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineFunctions {
    /// `R0(t) = F0(t) / S0(t)`
    pub odds: f64,
    /// `R0'(t)`
    pub odds_derivative: f64,
    pub survival: f64,
    pub failure: f64,
    pub hazard: f64,
    pub cumulative_hazard: f64,
}

impl Baseline {
    pub fn new(basis: BpBasis, coefficients: BaselineCoefficients) -> Result<Self> {
        if coefficients.len() != basis.degree() {
            return Err(Error::dim(format!(
                "{} baseline coefficients for degree {}",
                coefficients.len(),
                basis.degree()
            )));
        }
        Ok(Self { basis, coefficients })
    }

    pub fn basis(&self) -> &BpBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &BaselineCoefficients {
        &self.coefficients
    }

    pub fn kind(&self) -> BaselineKind {
        self.coefficients.kind()
    }

    /// Tail-adjusted `(c . g(t), c . G(t))`: hazard and cumulative hazard
    /// for the hazard kind, `R0'` and `R0` for the odds kind.
    fn bernstein_pair(&self, t: f64) -> Result<(f64, f64)> {
        let row = self.basis.row(t)?;
        let c = self.coefficients.values();
        let dens = c.iter().zip(&row.hazard_weights).map(|(a, b)| a * b).sum();
        let cum = c.iter().zip(&row.cumulative_weights).map(|(a, b)| a * b).sum();
        Ok((dens, cum))
    }

    /// `(ln R0(t), ln R0'(t))`.
    pub(crate) fn log_odds_terms(&self, t: f64) -> Result<(f64, f64)> {
        let (dens, cum) = self.bernstein_pair(t)?;
        Ok(log_odds_from_pair(self.kind(), dens, cum))
    }

    pub fn functions(&self, t: f64) -> Result<BaselineFunctions> {
        let (dens, cum) = self.bernstein_pair(t)?;
        Ok(match self.kind() {
            BaselineKind::Hazard => {
                let survival = (-cum).exp();
                BaselineFunctions {
                    odds: cum.exp_m1(),
                    odds_derivative: dens * cum.exp(),
                    survival,
                    failure: -(-cum).exp_m1(),
                    hazard: dens,
                    cumulative_hazard: cum,
                }
            }
            BaselineKind::Odds => BaselineFunctions {
                odds: cum,
                odds_derivative: dens,
                survival: 1.0 / (1.0 + cum),
                failure: cum / (1.0 + cum),
                hazard: dens / (1.0 + cum),
                cumulative_hazard: cum.ln_1p(),
            },
        })
    }
}

/// Map the Bernstein pair `(c.g, c.G)` to `(ln R0, ln R0')`.
#[inline]
pub(crate) fn log_odds_from_pair(kind: BaselineKind, dens: f64, cum: f64) -> (f64, f64) {
    match kind {
        BaselineKind::Hazard => (log_expm1(cum), dens.ln() + cum),
        BaselineKind::Odds => (cum.ln(), dens.ln()),
    }
}

/// `ln S` from the short-term, long-term and constant-effect linear
/// predictors and `ln R0`.
#[inline]
pub(crate) fn log_survival_kernel(eta_short: f64, eta_long: f64, eta_const: f64, log_r0: f64) -> f64 {
    let a = eta_short - eta_long + log_r0;
    if a == f64::NEG_INFINITY {
        return 0.0;
    }
    -(eta_long + eta_const).exp() * softplus(a)
}

/// `ln h` from the linear predictors, `ln R0` and `ln R0'`.
#[inline]
pub(crate) fn log_hazard_kernel(eta_short: f64, eta_long: f64, eta_const: f64, log_r0: f64, log_dr0: f64) -> f64 {
    eta_short + eta_const + log_dr0 - softplus(eta_short - eta_long + log_r0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRow {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

impl CovariateRow {
    pub fn new(z: Vec<f64>, x: Vec<f64>) -> Self {
        Self { z, x }
    }

    pub fn z_only(z: Vec<f64>) -> Self {
        Self { z, x: Vec::new() }
    }
}

/// Short-term (`lambda`) and long-term (`theta`) hazard ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPair {
    pub lambda: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LinearPredictors {
    pub short: f64,
    pub long: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YpParameters {
    psi: Vec<f64>,
    phi: Vec<f64>,
    beta: Vec<f64>,
    baseline: Baseline,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl YpParameters {
    pub fn new(psi: Vec<f64>, phi: Vec<f64>, beta: Vec<f64>, baseline: Baseline) -> Result<Self> {
        if psi.is_empty() {
            return Err(Error::dim("at least one time-varying-effect covariate is required"));
        }
        if psi.len() != phi.len() {
            return Err(Error::dim(format!("psi has {} entries but phi has {}", psi.len(), phi.len())));
        }
        if psi.iter().chain(&phi).chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::domain("regression coefficients must be finite"));
        }
        Ok(Self { psi, phi, beta, baseline })
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn baseline(&self) -> &Baseline {
        &self.baseline
    }

    pub fn q(&self) -> usize {
        self.psi.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn variant(&self) -> Variant {
        Variant::from_parts(self.baseline.kind(), !self.beta.is_empty())
    }

    pub(crate) fn linear_predictors(&self, row: &CovariateRow) -> Result<LinearPredictors> {
        if row.z.len() != self.q() || row.x.len() != self.p() {
            return Err(Error::dim(format!(
                "covariate row has (q={}, p={}) but parameters expect (q={}, p={})",
                row.z.len(),
                row.x.len(),
                self.q(),
                self.p()
            )));
        }
        let lp = LinearPredictors {
            short: dot(&row.z, &self.psi),
            long: dot(&row.z, &self.phi),
            constant: dot(&row.x, &self.beta),
        };
        for v in [lp.short, lp.long, lp.constant] {
            if !v.is_finite() {
                return Err(Error::domain("covariates must be finite"));
            }
            if v.abs() > MAX_LINEAR_PREDICTOR {
                return Err(Error::NumericRange(format!("linear predictor {v} exceeds +/-{MAX_LINEAR_PREDICTOR}")));
            }
        }
        Ok(lp)
    }

    pub fn ratios(&self, row: &CovariateRow) -> Result<RatioPair> {
        let lp = self.linear_predictors(row)?;
        Ok(RatioPair { lambda: lp.short.exp(), theta: lp.long.exp() })
    }

    pub fn baseline_functions(&self, t: f64) -> Result<BaselineFunctions> {
        self.baseline.functions(t)
    }

    pub fn log_survival(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        let lp = self.linear_predictors(row)?;
        let (log_r0, _) = self.baseline.log_odds_terms(t)?;
        Ok(log_survival_kernel(lp.short, lp.long, lp.constant, log_r0))
    }

    pub fn survival(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        Ok(self.log_survival(row, t)?.exp())
    }

    pub fn log_hazard(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        let lp = self.linear_predictors(row)?;
        let (log_r0, log_dr0) = self.baseline.log_odds_terms(t)?;
        Ok(log_hazard_kernel(lp.short, lp.long, lp.constant, log_r0, log_dr0))
    }

    /// `lambda theta R0' / (lambda + theta R0)`, times `e^{x beta}`.
    pub fn hazard(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        Ok(self.log_hazard(row, t)?.exp())
    }

    /// The same hazard written through the baseline hazard, failure and
    /// survival functions: `lambda theta h0 / (lambda F0 + theta S0)`, times
    /// `e^{x beta}`. Loses accuracy once `S0` underflows.
    pub fn hazard_via_baseline_survival(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        let RatioPair { lambda, theta } = self.ratios(row)?;
        let lp = self.linear_predictors(row)?;
        let b = self.baseline.functions(t)?;
        Ok(lambda * theta * b.hazard / (lambda * b.failure + theta * b.survival) * lp.constant.exp())
    }

    /// `ln h + ln S`; `-inf` when the hazard vanishes at `t`.
    pub fn log_density(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        let lp = self.linear_predictors(row)?;
        let (log_r0, log_dr0) = self.baseline.log_odds_terms(t)?;
        let lh = log_hazard_kernel(lp.short, lp.long, lp.constant, log_r0, log_dr0);
        if lh == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(lh + log_survival_kernel(lp.short, lp.long, lp.constant, log_r0))
    }
}
