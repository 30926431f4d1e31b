//! Crossing time of two survival curves, with bootstrap and posterior
//! interval estimates.

use rayon::prelude::*;

use crate::bayes::{hpd_interval, PosteriorSample};
use crate::bernstein::BpBasis;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::fit::{data_for_variant, fit_likelihood, fit_ml, FitConfig, Interval};
use crate::likelihood::Likelihood;
use crate::model::{CovariateRow, YpParameters};
use crate::rng::{stream, tag};
use rand::Rng;

/// Grid points scanned for sign changes before bisection.
pub const SCAN_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingQuery {
    pub profile_a: CovariateRow,
    pub profile_b: CovariateRow,
    pub t_min: f64,
    pub t_max: f64,
    /// Final bracket width.
    pub tolerance: f64,
}

impl CrossingQuery {
    pub fn new(profile_a: CovariateRow, profile_b: CovariateRow, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(Error::DegenerateQuery(format!("horizon ({t_min}, {t_max}] is not a valid positive interval")));
        }
        Ok(CrossingQuery { profile_a, profile_b, t_min, t_max, tolerance: 1e-10 * t_max })
    }

    /// Horizon from a tenth of the smallest event time up to the largest
    /// observed time.
    pub fn for_data(data: &SurvivalDataset, profile_a: CovariateRow, profile_b: CovariateRow) -> Result<Self> {
        Self::new(profile_a, profile_b, data.min_event_time() / 10.0, data.tau_hat())
    }

    pub fn swapped(&self) -> Self {
        CrossingQuery { profile_a: self.profile_b.clone(), profile_b: self.profile_a.clone(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingRoot {
    pub time: f64,
    /// Number of sign changes seen on the scan grid; above one the smallest
    /// root is returned.
    pub sign_changes: usize,
}

impl CrossingRoot {
    pub fn is_multiple(&self) -> bool {
        self.sign_changes > 1
    }
}

/// Smallest `t` in the horizon where the two profiles' survival curves meet,
/// or `None` when they do not cross there.
pub fn crossing_time(params: &YpParameters, query: &CrossingQuery) -> Result<Option<CrossingRoot>> {
    if !(query.t_min > 0.0 && query.t_min < query.t_max && query.tolerance > 0.0) {
        return Err(Error::DegenerateQuery("invalid horizon or tolerance".into()));
    }
    // difference of log survivals: same sign as the survival difference and
    // symmetric under swapping profiles
    let diff = |t: f64| -> Result<f64> {
        Ok(params.log_survival(&query.profile_a, t)? - params.log_survival(&query.profile_b, t)?)
    };
    let ratio = (query.t_max / query.t_min).ln();
    let point = |i: usize| {
        if i == SCAN_POINTS - 1 {
            query.t_max
        } else {
            query.t_min * (ratio * i as f64 / (SCAN_POINTS - 1) as f64).exp()
        }
    };
    let mut first: Option<(f64, f64, f64)> = None;
    let mut changes = 0;
    let mut any_nonzero = false;
    let mut prev_t = point(0);
    let mut prev = diff(prev_t)?;
    let mut exact: Option<f64> = None;
    for i in 1..SCAN_POINTS {
        let t = point(i);
        let cur = diff(t)?;
        any_nonzero |= prev != 0.0 || cur != 0.0;
        if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
            changes += 1;
            if first.is_none() && exact.is_none() {
                first = Some((prev_t, t, prev));
            }
        } else if cur == 0.0 && prev != 0.0 && i < SCAN_POINTS - 1 {
            // touches zero on a grid point; counts as a root if the sign flips after it
            let next = diff(point(i + 1))?;
            if next != 0.0 && next.signum() != prev.signum() {
                changes += 1;
                if first.is_none() && exact.is_none() {
                    exact = Some(t);
                }
            }
        }
        prev_t = t;
        prev = cur;
    }
    if !any_nonzero {
        return Err(Error::DegenerateQuery("the two profiles have identical survival curves".into()));
    }
    if let Some(t) = exact {
        return Ok(Some(CrossingRoot { time: t, sign_changes: changes }));
    }
    let Some((mut lo, mut hi, sign_lo)) = first else {
        return Ok(None);
    };
    while hi - lo > query.tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = diff(mid)?;
        if v == 0.0 {
            return Ok(Some(CrossingRoot { time: mid, sign_changes: changes }));
        }
        if v.signum() == sign_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(CrossingRoot { time: 0.5 * (lo + hi), sign_changes: changes }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingMethod {
    BootstrapPercentile,
    PosteriorHpd,
}

impl CrossingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossingMethod::BootstrapPercentile => "bootstrap-percentile",
            CrossingMethod::PosteriorHpd => "posterior-hpd",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossingEstimate {
    pub t_star: Option<f64>,
    pub interval: Option<Interval>,
    pub level: f64,
    pub method: CrossingMethod,
    /// Replicates or posterior draws attempted.
    pub replicates: usize,
    pub no_root: usize,
    /// Refits that errored (bootstrap only).
    pub failed: usize,
    pub multiple_roots: usize,
    /// More than half of the replicates had no root.
    pub unreliable: bool,
    /// Per-replicate roots in replicate order, rootless ones omitted.
    pub draws: Vec<f64>,
}

impl CrossingEstimate {
    pub fn no_root_fraction(&self) -> f64 {
        if self.replicates == 0 {
            0.0
        } else {
            self.no_root as f64 / self.replicates as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub fit: FitConfig,
}

/// Percentile interval from sorted values: order statistics at
/// `floor((1-level)/2 N)` and `ceil((1+level)/2 N) - 1`.
pub fn percentile_interval(sorted: &[f64], level: f64) -> Option<Interval> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let lo = (((1.0 - level) / 2.0) * n as f64).floor() as usize;
    let hi = ((((1.0 + level) / 2.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
    Some(Interval { lower: sorted[lo.min(hi)], upper: sorted[hi] })
}

/// Resampled row multiplicities for one bootstrap replicate.
pub fn bootstrap_weights(n: usize, seed: u64, replicate: u64) -> Vec<(usize, f64)> {
    let mut rng = stream(seed, &[tag::BOOTSTRAP, replicate]);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts.into_iter().enumerate().filter(|&(_, c)| c > 0).map(|(i, c)| (i, c as f64)).collect()
}

enum ReplicateRoot {
    Root(CrossingRoot),
    NoRoot,
    Failed,
}

/// Nonparametric bootstrap for the crossing time: resample rows, refit by
/// maximum likelihood and take percentile limits of the replicate roots.
/// The point estimate comes from the full-data fit.
pub fn bootstrap_crossing(
    data: &SurvivalDataset,
    query: &CrossingQuery,
    config: &BootstrapConfig,
) -> Result<CrossingEstimate> {
    if config.replicates < 2 {
        return Err(Error::config("the bootstrap needs at least 2 replicates"));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::config(format!("interval level {} must lie in (0, 1)", config.level)));
    }
    let full = fit_ml(data, &config.fit)?;
    let t_star = crossing_time(&full.params()?, query)?.map(|r| r.time);

    let prepared = data_for_variant(data, config.fit.variant)?;
    let degree = full.basis().degree();
    let warm = FitConfig {
        degree: Some(degree),
        initial_point: Some(full.unconstrained().to_vec()),
        initial_inverse_hessian: full.covariance_unconstrained().cloned(),
        compute_covariance: false,
        ..config.fit.clone()
    };
    let n = prepared.n();
    let roots: Vec<ReplicateRoot> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let rows = bootstrap_weights(n, config.seed, b);
            let tau = rows.iter().map(|&(i, _)| prepared.times()[i]).fold(0.0, f64::max);
            let fitted = BpBasis::new(degree, tau)
                .and_then(|basis| Likelihood::weighted(&prepared, config.fit.variant, basis, &rows))
                .and_then(|lik| fit_likelihood(&lik, full.unconstrained().to_vec(), Vec::new(), &warm))
                .and_then(|fit| fit.params());
            match fitted.and_then(|p| crossing_time(&p, query)) {
                Ok(Some(r)) => ReplicateRoot::Root(r),
                Ok(None) => ReplicateRoot::NoRoot,
                Err(_) => ReplicateRoot::Failed,
            }
        })
        .collect();

    let mut draws = Vec::new();
    let mut no_root = 0;
    let mut failed = 0;
    let mut multiple_roots = 0;
    for r in &roots {
        match r {
            ReplicateRoot::Root(root) => {
                draws.push(root.time);
                if root.is_multiple() {
                    multiple_roots += 1;
                }
            }
            ReplicateRoot::NoRoot => no_root += 1,
            ReplicateRoot::Failed => failed += 1,
        }
    }
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(CrossingEstimate {
        t_star,
        interval: percentile_interval(&sorted, config.level),
        level: config.level,
        method: CrossingMethod::BootstrapPercentile,
        replicates: config.replicates,
        no_root,
        failed,
        multiple_roots,
        unreliable: 2 * no_root > config.replicates,
        draws,
    })
}

/// Crossing time per posterior draw; point estimate is the mean root and
/// the interval is the HPD of the roots.
pub fn posterior_crossing(sample: &PosteriorSample, query: &CrossingQuery, level: f64) -> Result<CrossingEstimate> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("interval level {level} must lie in (0, 1)")));
    }
    let count = sample.draw_count();
    let roots: Vec<Result<Option<CrossingRoot>>> =
        (0..count).into_par_iter().map(|i| sample.params_at(i).and_then(|p| crossing_time(&p, query))).collect();
    let mut draws = Vec::new();
    let mut no_root = 0;
    let mut multiple_roots = 0;
    for r in roots {
        match r? {
            Some(root) => {
                draws.push(root.time);
                if root.is_multiple() {
                    multiple_roots += 1;
                }
            }
            None => no_root += 1,
        }
    }
    let (t_star, interval) = if draws.is_empty() {
        (None, None)
    } else {
        // shifted mean is exact when all roots coincide
        let base = draws[0];
        let mean = base + draws.iter().map(|d| d - base).sum::<f64>() / draws.len() as f64;
        let interval = if draws.len() >= 2 {
            Some(hpd_interval(&draws, level)?)
        } else {
            Some(Interval { lower: draws[0], upper: draws[0] })
        };
        (Some(mean), interval)
    };
    Ok(CrossingEstimate {
        t_star,
        interval,
        level,
        method: CrossingMethod::PosteriorHpd,
        replicates: count,
        no_root,
        failed: 0,
        multiple_roots,
        unreliable: 2 * no_root > count,
        draws,
    })
}

/// Survival values per profile on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub grid: Vec<f64>,
    /// `survival[profile][point]`.
    pub survival: Vec<Vec<f64>>,
    /// Pointwise lower and upper band limits when computed from a posterior
    /// sample.
    pub bands: Option<Vec<Vec<Interval>>>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::domain("grid times must be finite and nonnegative"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("grid must be sorted"));
    }
    Ok(())
}

/// Fitted survival for each profile on the grid.
pub fn survival_curve_grid(params: &YpParameters, profiles: &[CovariateRow], grid: &[f64]) -> Result<CurveTable> {
    check_grid(grid)?;
    let survival = profiles
        .iter()
        .map(|row| grid.iter().map(|&t| params.survival(row, t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(CurveTable { grid: grid.to_vec(), survival, bands: None })
}

/// Posterior-mean survival per profile with pointwise equal-tailed bands.
pub fn posterior_survival_bands(
    sample: &PosteriorSample,
    profiles: &[CovariateRow],
    grid: &[f64],
    level: f64,
) -> Result<CurveTable> {
    check_grid(grid)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("band level {level} must lie in (0, 1)")));
    }
    let count = sample.draw_count();
    let per_draw: Vec<Vec<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let p = sample.params_at(i)?;
            Ok(survival_curve_grid(&p, profiles, grid)?.survival)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut survival = Vec::with_capacity(profiles.len());
    let mut bands = Vec::with_capacity(profiles.len());
    for j in 0..profiles.len() {
        let mut mean_row = Vec::with_capacity(grid.len());
        let mut band_row = Vec::with_capacity(grid.len());
        for g in 0..grid.len() {
            let mut vals: Vec<f64> = per_draw.iter().map(|d| d[j][g]).collect();
            mean_row.push(vals.iter().sum::<f64>() / count as f64);
            vals.sort_by(f64::total_cmp);
            band_row.push(percentile_interval(&vals, level).expect("nonempty"));
        }
        survival.push(mean_row);
        bands.push(band_row);
    }
    Ok(CurveTable { grid: grid.to_vec(), survival, bands: Some(bands) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernstein::{BaselineCoefficients, BaselineKind};
    use crate::model::Baseline;
    use crate::simulation::{generate_dataset, tune_censoring_bound, SimulationDesign};
    use crate::Variant;

    /// Odds baseline with `R0(t) = t` on `(0, 10]`.
    fn linear_odds(psi: f64, phi: f64) -> YpParameters {
        let basis = BpBasis::new(1, 10.0).unwrap();
        let baseline =
            Baseline::new(basis, BaselineCoefficients::new(BaselineKind::Odds, vec![10.0]).unwrap()).unwrap();
        YpParameters::new(vec![psi], vec![phi], Vec::new(), baseline).unwrap()
    }

    fn two_sample_query() -> CrossingQuery {
        CrossingQuery::new(CovariateRow::z_only(vec![1.0]), CovariateRow::z_only(vec![0.0]), 1e-3, 10.0).unwrap()
    }

    /// Baseline odds at which profiles `z = 1` and `z = 0` meet.
    fn odds_root(psi: f64, phi: f64) -> f64 {
        let (lambda, theta) = (psi.exp(), phi.exp());
        let g = |r: f64| theta * (lambda / theta * r).ln_1p() - r.ln_1p();
        let (mut lo, mut hi) = (1e-9f64, 1e9f64);
        for _ in 0..300 {
            let mid = (lo * hi).sqrt();
            if g(mid).signum() == g(1e-9).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    }

    #[test]
    fn root_matches_oracle_and_has_small_residual() {
        let params = linear_odds(2.0, -1.0);
        let query = two_sample_query();
        let root = crossing_time(&params, &query).unwrap().unwrap();
        assert!((root.time - odds_root(2.0, -1.0)).abs() < 1e-6, "{root:?}");
        assert!(!root.is_multiple());
        let residual = params.survival(&query.profile_a, root.time).unwrap()
            - params.survival(&query.profile_b, root.time).unwrap();
        assert!(residual.abs() <= 1e-8);
    }

    #[test]
    fn proportional_hazards_never_cross() {
        let params = linear_odds(0.7, 0.7);
        assert_eq!(crossing_time(&params, &two_sample_query()).unwrap(), None);
        let grid: Vec<f64> = (0..50).map(|i| 0.2 * i as f64).collect();
        let table =
            survival_curve_grid(&params, &[two_sample_query().profile_a, two_sample_query().profile_b], &grid).unwrap();
        assert!(table.survival[0].iter().zip(&table.survival[1]).skip(1).all(|(a, b)| a < b));
    }

    #[test]
    fn swapping_profiles_keeps_the_root() {
        for (psi, phi) in [(2.0, -1.0), (-1.5, 0.8), (0.4, -2.0)] {
            let params = linear_odds(psi, phi);
            let q = two_sample_query();
            let a = crossing_time(&params, &q).unwrap().map(|r| r.time);
            let b = crossing_time(&params, &q.swapped()).unwrap().map(|r| r.time);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_queries() {
        let params = linear_odds(2.0, -1.0);
        let same =
            CrossingQuery::new(CovariateRow::z_only(vec![1.0]), CovariateRow::z_only(vec![1.0]), 0.1, 5.0).unwrap();
        assert!(matches!(crossing_time(&params, &same), Err(Error::DegenerateQuery(_))));
        assert!(CrossingQuery::new(same.profile_a.clone(), same.profile_b.clone(), 0.0, 5.0).is_err());
        assert!(CrossingQuery::new(same.profile_a.clone(), same.profile_b.clone(), 6.0, 5.0).is_err());
    }

    #[test]
    fn percentile_interval_order_statistics() {
        let iv = percentile_interval(&[3.0, 8.0], 0.95).unwrap();
        assert_eq!((iv.lower, iv.upper), (3.0, 8.0));
        let sorted: Vec<f64> = (1..=1000).map(f64::from).collect();
        let iv = percentile_interval(&sorted, 0.95).unwrap();
        assert_eq!((iv.lower, iv.upper), (26.0, 975.0));
        assert!(percentile_interval(&[], 0.95).is_none());
    }

    #[test]
    fn resampling_is_keyed_by_seed_and_replicate() {
        let w = bootstrap_weights(50, 4, 2);
        assert_eq!(w.iter().map(|(_, c)| c).sum::<f64>(), 50.0);
        assert_eq!(w, bootstrap_weights(50, 4, 2));
        assert_ne!(w, bootstrap_weights(50, 4, 3));
    }

    #[test]
    fn bootstrap_two_replicates() {
        let design = SimulationDesign::scenario_i(300);
        let nu = tune_censoring_bound(&design, 0.3, 2).unwrap();
        let data = generate_dataset(&design, nu, 2, 0).unwrap();
        let query =
            CrossingQuery::for_data(&data, CovariateRow::z_only(vec![0.0]), CovariateRow::z_only(vec![1.0])).unwrap();
        let config = BootstrapConfig { replicates: 2, level: 0.95, seed: 9, fit: FitConfig::new(Variant::M1) };
        let est = bootstrap_crossing(&data, &query, &config).unwrap();
        assert_eq!(est.draws.len(), 2);
        let (lo, hi) = (est.draws[0].min(est.draws[1]), est.draws[0].max(est.draws[1]));
        let iv = est.interval.unwrap();
        assert_eq!((iv.lower, iv.upper), (lo, hi));
        let again = bootstrap_crossing(&data, &query, &config).unwrap();
        assert_eq!(est.draws, again.draws);
        assert!(bootstrap_crossing(&data, &query, &BootstrapConfig { replicates: 1, ..config }).is_err());
    }

    #[test]
    fn curve_grid_examples() {
        let params = linear_odds(2.0, -1.0);
        let profiles = [CovariateRow::z_only(vec![0.0]), CovariateRow::z_only(vec![1.0])];
        let at_zero = survival_curve_grid(&params, &profiles, &[0.0]).unwrap();
        assert!(at_zero.survival.iter().all(|s| s == &[1.0]));
        let grid: Vec<f64> = (0..100).map(|i| 0.15 * i as f64).collect();
        let table = survival_curve_grid(&params, &profiles, &grid).unwrap();
        for (row, curve) in profiles.iter().zip(&table.survival) {
            for (&t, &s) in grid.iter().zip(curve) {
                assert_eq!(s, params.survival(row, t).unwrap());
            }
            assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(survival_curve_grid(&params, &profiles, &[2.0, 1.0]).is_err());
    }
}
