//! Beta-family special functions used by the Bernstein basis.
//!
//! The log-gamma uses exact factorials for small positive integers (the only
//! arguments the basis needs) and a Lanczos series elsewhere. The regularized
//! incomplete beta is the usual continued fraction evaluated with the modified
//! Lentz method.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const CF_MAX_ITER: usize = 1000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NAN;
    }
    if x.fract() == 0.0 && x <= 171.0 {
        // (x-1)! accumulated exactly enough in f64 for every argument here
        let n = x as u32;
        let mut acc = 1.0f64;
        for k in 2..n {
            acc *= f64::from(k);
        }
        return acc.ln();
    }
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut series = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        series += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_shapes(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::domain(format!("beta shapes must be positive, got ({a}, {b})")));
    }
    Ok(())
}

/// Density of Beta(a, b) at `x` in `[0, 1]`.
pub fn beta_pdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("beta density argument {x} outside [0, 1]")));
    }
    // endpoint limits
    if x == 0.0 {
        return Ok(match a.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => (-ln_beta(a, b)).exp(),
            _ => 0.0,
        });
    }
    if x == 1.0 {
        return Ok(match b.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => (-ln_beta(a, b)).exp(),
            _ => 0.0,
        });
    }
    let log_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b);
    Ok(log_pdf.exp())
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("incomplete beta argument {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let log_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    // the fraction converges fast below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(log_front.exp() * continued_fraction(x, a, b) / a)
    } else {
        Ok(1.0 - log_front.exp() * continued_fraction(1.0 - x, b, a) / b)
    }
}

fn continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert_eq!(ln_gamma(1.0), 0.0);
        assert_eq!(ln_gamma(2.0), 0.0);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-15);
        let half = 0.5 * std::f64::consts::PI.ln();
        assert!((ln_gamma(0.5) - half).abs() < 1e-14);
        assert!((ln_gamma(3.5) - (3.323_350_970_447_842_6f64).ln()).abs() < 1e-14);
        assert!(ln_gamma(0.0).is_nan());
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, b) = 1 - (1-x)^b and I_x(a, 1) = x^a
        for &x in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            for b in 1..8 {
                let b = f64::from(b);
                let got = regularized_incomplete_beta(x, 1.0, b).unwrap();
                let want = 1.0 - (1.0f64 - x).powf(b);
                assert!((got - want).abs() <= 1e-13 * want.max(1e-3), "x={x} b={b}");
                let got = regularized_incomplete_beta(x, b, 1.0).unwrap();
                let want = x.powf(b);
                assert!((got - want).abs() <= 1e-13 * want.max(1e-3), "x={x} a={b}");
            }
        }
    }

    #[test]
    fn incomplete_beta_agrees_with_statrs() {
        for &(a, b) in &[(2.0, 3.0), (0.5, 0.5), (7.0, 13.0), (12.5, 1.5), (30.0, 1.0)] {
            for i in 1..20 {
                let x = f64::from(i) / 20.0;
                let ours = regularized_incomplete_beta(x, a, b).unwrap();
                let theirs = statrs::function::beta::beta_reg(a, b, x);
                assert!((ours - theirs).abs() < 1e-12, "a={a} b={b} x={x}");
            }
        }
    }

    #[test]
    fn pdf_endpoints_and_domain() {
        assert_eq!(beta_pdf(0.0, 1.0, 2.0).unwrap(), 2.0);
        assert_eq!(beta_pdf(1.0, 2.0, 1.0).unwrap(), 2.0);
        assert_eq!(beta_pdf(0.0, 2.0, 2.0).unwrap(), 0.0);
        assert!(beta_pdf(1.5, 2.0, 2.0).is_err());
        assert!(beta_pdf(0.5, 0.0, 2.0).is_err());
        assert!(regularized_incomplete_beta(-0.1, 1.0, 1.0).is_err());
    }
}
