//! Quasi-Newton minimisation (BFGS with a strong-Wolfe line search).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Stop when `max|g| / max(1, |f|)` drops below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease drops below this.
    pub rel_tol: f64,
    pub initial_inverse_hessian: Option<DMatrix<f64>>,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig { max_iter: 500, grad_tol: 1e-6, rel_tol: 1e-10, initial_inverse_hessian: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub inverse_hessian: DMatrix<f64>,
}

impl BfgsOutcome {
    pub fn scaled_gradient(&self) -> f64 {
        scaled_norm(&self.gradient, self.value)
    }
}

fn scaled_norm(g: &[f64], f: f64) -> f64 {
    g.iter().fold(0.0f64, |a, v| a.max(v.abs())) / f.abs().max(1.0)
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

struct Objective<F> {
    func: F,
    buf: Vec<f64>,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Point {
        self.evals += 1;
        let f = (self.func)(x.as_slice(), &mut self.buf);
        let f = if f.is_nan() { f64::INFINITY } else { f };
        Point { x: x.clone(), f, g: DVector::from_column_slice(&self.buf) }
    }
}

/// Minimise `func`, which returns the objective and writes the gradient into
/// its second argument. A non-finite objective is treated as an overshoot by
/// the line search.
pub fn minimize<F>(func: F, x0: &[f64], config: &BfgsConfig) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Objective { func, buf: vec![0.0; n], evals: 0 };
    let mut cur = obj.eval(&DVector::from_column_slice(x0));
    if !cur.f.is_finite() || cur.g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut h = match &config.initial_inverse_hessian {
        Some(m) if m.nrows() == n && m.ncols() == n => m.clone(),
        Some(_) => return Err(Error::dim("initial inverse Hessian has the wrong shape")),
        None => DMatrix::identity(n, n),
    };
    let mut scaled = config.initial_inverse_hessian.is_some();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut restarts = 0;

    while iterations < config.max_iter {
        if scaled_norm(cur.g.as_slice(), cur.f) <= config.grad_tol {
            termination = Termination::Gradient;
            break;
        }
        let mut dir = -(&h * &cur.g);
        let mut slope = dir.dot(&cur.g);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            h = DMatrix::identity(n, n);
            scaled = false;
            dir = -cur.g.clone();
            slope = dir.dot(&cur.g);
        }
        let first_step = if scaled { 1.0 } else { (1.0 / cur.g.amax()).min(1.0) };
        let next = match line_search(&mut obj, &cur, &dir, slope, first_step) {
            Some(p) => p,
            None => {
                if scaled {
                    h = DMatrix::identity(n, n);
                    scaled = false;
                    continue;
                }
                termination = Termination::LineSearchFailed;
                break;
            }
        };
        iterations += 1;
        let s = &next.x - &cur.x;
        let y = &next.g - &cur.g;
        let sy = s.dot(&y);
        let rel = (cur.f - next.f).abs() / cur.f.abs().max(1.0);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        cur = next;
        if rel <= config.rel_tol {
            if scaled_norm(cur.g.as_slice(), cur.f) <= config.grad_tol {
                termination = Termination::Gradient;
                break;
            }
            // stalled with the gradient above tolerance: drop the curvature
            // model and try again a few times before giving up
            if restarts == MAX_RESTARTS {
                termination = Termination::RelativeChange;
                break;
            }
            restarts += 1;
            h = DMatrix::identity(n, n);
            scaled = false;
        }
    }
    Ok(BfgsOutcome {
        x: cur.x.as_slice().to_vec(),
        value: cur.f,
        gradient: cur.g.as_slice().to_vec(),
        iterations,
        termination,
        inverse_hessian: h,
    })
}

const MAX_RESTARTS: usize = 3;
const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn line_search<F>(obj: &mut Objective<F>, start: &Point, dir: &DVector<f64>, slope0: f64, first: f64) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let at = |obj: &mut Objective<F>, a: f64| {
        let x = &start.x + dir * a;
        obj.eval(&x)
    };
    let mut a_prev = 0.0;
    let mut f_prev = start.f;
    let mut slope_prev = slope0;
    let mut a = first;
    for i in 0..40 {
        let p = at(obj, a);
        if !p.f.is_finite() {
            // overshoot into an invalid region: shrink toward the last good step
            a = a_prev + 0.25 * (a - a_prev);
            if a - a_prev < 1e-16 {
                return None;
            }
            continue;
        }
        if p.f > start.f + C1 * a * slope0 || (i > 0 && p.f >= f_prev) {
            return zoom(obj, start, dir, slope0, (a_prev, f_prev, slope_prev), (a, p.f, p.g.dot(dir)));
        }
        let slope = p.g.dot(dir);
        if slope.abs() <= -C2 * slope0 {
            return Some(p);
        }
        if slope >= 0.0 {
            return zoom(obj, start, dir, slope0, (a, p.f, slope), (a_prev, f_prev, slope_prev));
        }
        a_prev = a;
        f_prev = p.f;
        slope_prev = slope;
        a *= 2.0;
    }
    None
}

fn zoom<F>(
    obj: &mut Objective<F>,
    start: &Point,
    dir: &DVector<f64>,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut best: Option<Point> = None;
    for _ in 0..60 {
        let a = interpolate(lo, hi);
        let x = &start.x + dir * a;
        let p = obj.eval(&x);
        if !p.f.is_finite() || p.f > start.f + C1 * a * slope0 || p.f >= lo.1 {
            hi = (a, p.f, if p.f.is_finite() { p.g.dot(dir) } else { f64::NAN });
        } else {
            let slope = p.g.dot(dir);
            if slope.abs() <= -C2 * slope0 {
                return Some(p);
            }
            if slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, p.f, slope);
            best = Some(p);
        }
        if (hi.0 - lo.0).abs() < 1e-14 * lo.0.abs().max(1e-10) {
            break;
        }
    }
    // accept sufficient decrease without the curvature condition
    best.filter(|p| p.f < start.f)
}

/// Cubic interpolation between the bracket ends, safeguarded to stay inside.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, d0) = lo;
    let (a1, f1, d1) = hi;
    let (left, right) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let width = right - left;
    let mid = 0.5 * (a0 + a1);
    if !(f1.is_finite() && d1.is_finite()) {
        return mid;
    }
    let t1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = t1 * t1 - d0 * d1;
    if disc < 0.0 {
        return mid;
    }
    let t2 = (a1 - a0).signum() * disc.sqrt();
    let a = a1 - (a1 - a0) * (d1 + t2 - t1) / (d1 - d0 + 2.0 * t2);
    if a.is_finite() && a > left + 0.1 * width && a < right - 0.1 * width {
        a
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = BfgsConfig { grad_tol: 1e-9, rel_tol: 0.0, ..Default::default() };
        let out = minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(out.termination, Termination::Gradient);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
    }

    #[test]
    fn quadratic_inverse_hessian() {
        // f = 0.5 x'Ax with A = [[3,1],[1,2]]
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 3.0 * x[0] + x[1];
            g[1] = x[0] + 2.0 * x[1];
            0.5 * (x[0] * g[0] + x[1] * g[1])
        };
        let cfg = BfgsConfig { grad_tol: 1e-12, rel_tol: 0.0, ..Default::default() };
        let out = minimize(f, &[4.0, -3.0], &cfg).unwrap();
        assert!(out.x.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn barrier_regions_are_avoided() {
        // -ln x + x, minimum at 1, NaN for x <= 0
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = -1.0 / x[0] + 1.0;
            if x[0] <= 0.0 {
                f64::NAN
            } else {
                -x[0].ln() + x[0]
            }
        };
        let out = minimize(f, &[0.01], &BfgsConfig::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let f = |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::INFINITY
        };
        assert!(matches!(minimize(f, &[0.0], &BfgsConfig::default()), Err(Error::NonFiniteObjective)));
    }
}
