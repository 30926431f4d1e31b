//! Bernstein-polynomial baselines.
//!
//! A baseline hazard (or baseline odds derivative) of degree `m` on a horizon
//! `tau` is a nonnegative combination of the Beta(k, m-k+1) densities scaled
//! to `(0, tau]`:
//!
//! ```text
//! g_k(t) = f_Beta(t/tau | k, m-k+1) / tau        G_k(t) = F_Beta(t/tau | k, m-k+1)
//! h(t)   = sum_k c_k g_k(t)                       H(t)   = sum_k c_k G_k(t)
//! ```
//!
//! Beyond the horizon the hazard is held at its boundary value `m c_m / tau`
//! so the cumulative form diverges linearly.

use crate::error::{Error, Result};
use crate::special;

/// Whether the Bernstein coefficients describe the baseline hazard (models
/// M1/M1*) or the baseline odds (models M2/M2*).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Hazard,
    Odds,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Hazard => "hazard",
            BaselineKind::Odds => "odds",
        }
    }
}

/// Degree and horizon of a Bernstein basis. The horizon doubles as the
/// tail-adjustment point: for a fitted model it is the largest observed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpBasis {
    degree: usize,
    tau: f64,
}

/// Nonnegative Bernstein coefficients, one per basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCoefficients {
    kind: BaselineKind,
    values: Vec<f64>,
}

impl BaselineCoefficients {
    pub fn new(kind: BaselineKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("baseline needs at least one coefficient"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("baseline coefficient {v} is not a finite nonnegative value")));
        }
        Ok(Self { kind, values })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tail-adjusted basis values at one time point: `h0 = c . hazard_weights`
/// and `H0 = c . cumulative_weights` for any coefficient vector `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    pub hazard_weights: Vec<f64>,
    pub cumulative_weights: Vec<f64>,
}

/// `ceil(n^0.4)` clamped to `[5, 30]`.
pub fn default_degree(n: usize) -> usize {
    let m = (n as f64).powf(0.4).ceil() as usize;
    m.clamp(5, 30)
}

impl BpBasis {
    pub fn new(degree: usize, tau: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::domain("Bernstein degree must be at least 1"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive and finite, got {tau}")));
        }
        Ok(Self { degree, tau })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.degree {
            return Err(Error::domain(format!("basis index {k} outside 1..={}", self.degree)));
        }
        Ok(())
    }

    fn check_time(t: f64) -> Result<()> {
        if !(t >= 0.0) || t.is_infinite() {
            return Err(Error::domain(format!("time must be finite and nonnegative, got {t}")));
        }
        Ok(())
    }

    fn check_coefficients(&self, coef: &BaselineCoefficients) -> Result<()> {
        if coef.len() != self.degree {
            return Err(Error::dim(format!("{} coefficients for a degree-{} basis", coef.len(), self.degree)));
        }
        Ok(())
    }

    /// `g_k(t)`: the Beta(k, m-k+1) density at `t/tau`, divided by `tau`.
    /// Zero beyond the horizon.
    pub fn density(&self, k: usize, t: f64) -> Result<f64> {
        self.check_index(k)?;
        Self::check_time(t)?;
        if t > self.tau {
            return Ok(0.0);
        }
        let m = self.degree as f64;
        let k = k as f64;
        Ok(special::beta_pdf(t / self.tau, k, m - k + 1.0)? / self.tau)
    }

    /// `G_k(t)`: the Beta(k, m-k+1) CDF at `t/tau`, clamped to 1 beyond the
    /// horizon.
    pub fn cdf(&self, k: usize, t: f64) -> Result<f64> {
        self.check_index(k)?;
        Self::check_time(t)?;
        let x = (t / self.tau).min(1.0);
        let m = self.degree as f64;
        let k = k as f64;
        special::regularized_incomplete_beta(x, k, m - k + 1.0)
    }

    /// Pure Bernstein hazard `sum_k c_k g_k(t)`.
    pub fn hazard(&self, coef: &BaselineCoefficients, t: f64) -> Result<f64> {
        self.check_coefficients(coef)?;
        let mut acc = 0.0;
        for (i, c) in coef.values().iter().enumerate() {
            acc += c * self.density(i + 1, t)?;
        }
        Ok(acc)
    }

    /// Pure Bernstein cumulative form `sum_k c_k G_k(t)`.
    pub fn cumulative(&self, coef: &BaselineCoefficients, t: f64) -> Result<f64> {
        self.check_coefficients(coef)?;
        let mut acc = 0.0;
        for (i, c) in coef.values().iter().enumerate() {
            acc += c * self.cdf(i + 1, t)?;
        }
        Ok(acc)
    }

    /// Hazard with the constant tail `m c_m / tau` from the horizon on.
    pub fn tail_hazard(&self, coef: &BaselineCoefficients, t: f64) -> Result<f64> {
        self.check_coefficients(coef)?;
        Self::check_time(t)?;
        if t < self.tau {
            self.hazard(coef, t)
        } else {
            Ok(self.boundary_rate(coef))
        }
    }

    /// Cumulative form matching [`tail_hazard`](Self::tail_hazard).
    pub fn tail_cumulative(&self, coef: &BaselineCoefficients, t: f64) -> Result<f64> {
        self.check_coefficients(coef)?;
        Self::check_time(t)?;
        if t < self.tau {
            self.cumulative(coef, t)
        } else {
            let at_tau: f64 = coef.values().iter().sum();
            Ok(at_tau + (t - self.tau) * self.boundary_rate(coef))
        }
    }

    fn boundary_rate(&self, coef: &BaselineCoefficients) -> f64 {
        self.degree as f64 * coef.values()[self.degree - 1] / self.tau
    }

    /// Tail-adjusted basis row at `t`, computed from the closed-form Bernstein
    /// polynomials (integer beta shapes) rather than the special functions.
    pub fn row(&self, t: f64) -> Result<BasisRow> {
        let mut row = BasisRow { hazard_weights: vec![0.0; self.degree], cumulative_weights: vec![0.0; self.degree] };
        self.fill_row(t, &mut row.hazard_weights, &mut row.cumulative_weights)?;
        Ok(row)
    }

    /// Allocation-free form of [`row`](Self::row).
    pub fn fill_row(&self, t: f64, hazard: &mut [f64], cumulative: &mut [f64]) -> Result<()> {
        Self::check_time(t)?;
        let m = self.degree;
        if hazard.len() != m || cumulative.len() != m {
            return Err(Error::dim("basis row buffers must have length equal to the degree"));
        }
        if t >= self.tau {
            hazard.fill(0.0);
            cumulative.fill(1.0);
            hazard[m - 1] = m as f64 / self.tau;
            cumulative[m - 1] += m as f64 * (t - self.tau) / self.tau;
            return Ok(());
        }
        let x = t / self.tau;
        let y = 1.0 - x;

        // degree-m Bernstein terms b_{j,m}, j = 0..=m; cdf_k is the tail sum j >= k
        let mut suffix = 0.0;
        let mut binom = 1.0f64; // C(m, m)
        for j in (1..=m).rev() {
            let term = binom * x.powi(j as i32) * y.powi((m - j) as i32);
            suffix += term;
            cumulative[j - 1] = suffix;
            // C(m, j-1) = C(m, j) * j / (m - j + 1)
            binom = binom * j as f64 / (m - j + 1) as f64;
        }

        // density_k = m C(m-1, k-1) x^(k-1) y^(m-k) / tau
        let scale = m as f64 / self.tau;
        let mut binom = 1.0f64; // C(m-1, 0)
        for k in 1..=m {
            let i = k - 1;
            hazard[i] = scale * binom * x.powi(i as i32) * y.powi((m - k) as i32);
            binom = binom * (m - k) as f64 / k as f64;
        }
        Ok(())
    }
}

/// Order-`m` Bernstein polynomial of a target function on `(0, tau]`, with
/// coefficients `b_k = C(k tau / m)`. The `k = 0` coefficient takes the right
/// limit `C(0+)`, approximated by evaluating just inside the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BpApproximation {
    tau: f64,
    coefficients: Vec<f64>,
}

impl BpApproximation {
    pub fn new(target: impl Fn(f64) -> f64, degree: usize, tau: f64) -> Result<Self> {
        BpBasis::new(degree, tau)?;
        let right_limit = target(tau * f64::EPSILON);
        let coefficients =
            std::iter::once(right_limit).chain((1..=degree).map(|k| target(k as f64 * tau / degree as f64))).collect();
        Ok(Self { tau, coefficients })
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `B_m(t; C) = sum_k b_k C(m,k) (t/tau)^k (1 - t/tau)^(m-k)` for `t` in `[0, tau]`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.tau).contains(&t) {
            return Err(Error::domain(format!("approximation evaluated at {t} outside [0, {}]", self.tau)));
        }
        let m = self.degree();
        let x = t / self.tau;
        let y = 1.0 - x;
        let mut binom = 1.0f64;
        let mut acc = 0.0;
        for (k, b) in self.coefficients.iter().enumerate() {
            acc += b * binom * x.powi(k as i32) * y.powi((m - k) as i32);
            binom = binom * (m - k) as f64 / (k + 1) as f64;
        }
        Ok(acc)
    }
}
