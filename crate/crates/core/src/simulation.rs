//! Data generation from the YP model with a Weibull baseline, censoring
//! calibration and Monte Carlo studies.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::crossing::{bootstrap_crossing, crossing_time, BootstrapConfig, CrossingQuery};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::fit::{fit_ml, FitConfig, Interval};
use crate::model::{log_survival_kernel, CovariateRow, Variant};
use crate::numeric::{log_expm1, mean_sd};
use crate::rng::{stream, tag};

/// Pilot sample size used to calibrate the censoring bound.
pub const TUNING_DRAWS: usize = 100_000;

/// Baseline survival `exp(-rate * t^shape)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullBaseline {
    shape: f64,
    rate: f64,
}

impl WeibullBaseline {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::domain(format!("Weibull shape {shape} and rate {rate} must be positive")));
        }
        Ok(Self { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        self.rate * t.powf(self.shape)
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// Time at which the cumulative hazard reaches `h`.
    pub fn inverse_cumulative(&self, h: f64) -> f64 {
        (h / self.rate).powf(1.0 / self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateGenerator {
    Bernoulli(f64),
    StandardNormal,
}

impl CovariateGenerator {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateGenerator::Bernoulli(p) => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateGenerator::StandardNormal => StandardNormal.sample(rng),
        }
    }
}

/// Data-generating design. Times follow the YP model with the closed-form
/// Weibull baseline; the `x` block enters as `S^{exp(x beta)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDesign {
    pub n: usize,
    pub z_generators: Vec<CovariateGenerator>,
    pub x_generators: Vec<CovariateGenerator>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub beta: Vec<f64>,
    pub baseline: WeibullBaseline,
    pub z_names: Vec<String>,
    pub x_names: Vec<String>,
}

impl SimulationDesign {
    /// Two-sample design: one Bernoulli(0.5) covariate, `psi = 2`, `phi = -1`.
    pub fn scenario_i(n: usize) -> Self {
        SimulationDesign {
            n,
            z_generators: vec![CovariateGenerator::Bernoulli(0.5)],
            x_generators: Vec::new(),
            psi: vec![2.0],
            phi: vec![-1.0],
            beta: Vec::new(),
            baseline: WeibullBaseline { shape: 1.5, rate: 0.05 },
            z_names: vec!["z".into()],
            x_names: Vec::new(),
        }
    }

    /// Four-covariate regression design; the last two covariates share their
    /// short- and long-term coefficients and form the constant-effect block.
    pub fn scenario_ii(n: usize) -> Self {
        SimulationDesign {
            n,
            z_generators: vec![CovariateGenerator::Bernoulli(0.5), CovariateGenerator::StandardNormal],
            x_generators: vec![CovariateGenerator::Bernoulli(0.5), CovariateGenerator::StandardNormal],
            psi: vec![2.0, -0.5],
            phi: vec![-1.0, 1.0],
            beta: vec![1.5, -1.5],
            baseline: WeibullBaseline { shape: 1.5, rate: 0.05 },
            z_names: (1..=2).map(|j| format!("z{j}")).collect(),
            x_names: (3..=4).map(|j| format!("z{j}")).collect(),
        }
    }

    pub fn by_name(name: &str, n: usize) -> Result<Self> {
        match name {
            "scenario-i" | "i" | "1" => Ok(Self::scenario_i(n)),
            "scenario-ii" | "ii" | "2" => Ok(Self::scenario_ii(n)),
            other => Err(Error::config(format!("unknown scenario '{other}' (expected scenario-i or scenario-ii)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("sample size must be at least 2"));
        }
        if self.z_generators.is_empty() || self.psi.len() != self.z_generators.len() || self.phi.len() != self.psi.len()
        {
            return Err(Error::dim("psi, phi and z generators must have the same positive length"));
        }
        if self.beta.len() != self.x_generators.len() {
            return Err(Error::dim("beta and x generators must have the same length"));
        }
        if self.z_names.len() != self.psi.len() || self.x_names.len() != self.beta.len() {
            return Err(Error::dim("covariate names do not match the coefficient vectors"));
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.psi.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// True regression coefficients in the fitted layout of `variant`.
    /// The original formulation absorbs `x` into `z` with equal short- and
    /// long-term effects.
    pub fn truth(&self, variant: Variant) -> Result<Vec<f64>> {
        if variant.has_constant_block() {
            if self.p() == 0 {
                return Err(Error::config(format!("variant {variant} needs a design with constant-effect covariates")));
            }
            Ok(self.psi.iter().chain(&self.phi).chain(&self.beta).copied().collect())
        } else {
            Ok(self.psi.iter().chain(&self.beta).chain(&self.phi).chain(&self.beta).copied().collect())
        }
    }

    pub fn draw_row<R: Rng + ?Sized>(&self, rng: &mut R) -> CovariateRow {
        CovariateRow::new(
            self.z_generators.iter().map(|g| g.draw(rng)).collect(),
            self.x_generators.iter().map(|g| g.draw(rng)).collect(),
        )
    }

    fn predictors(&self, row: &CovariateRow) -> Result<(f64, f64, f64)> {
        if row.z.len() != self.q() || row.x.len() != self.p() {
            return Err(Error::dim("covariate row does not match the design"));
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        Ok((dot(&row.z, &self.psi), dot(&row.z, &self.phi), dot(&row.x, &self.beta)))
    }

    /// Generating-model `ln S(t | row)`.
    pub fn log_survival(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("time {t} must be nonnegative")));
        }
        let (short, long, constant) = self.predictors(row)?;
        Ok(log_survival_kernel(short, long, constant, log_expm1(self.baseline.cumulative_hazard(t))))
    }

    pub fn survival(&self, row: &CovariateRow, t: f64) -> Result<f64> {
        Ok(self.log_survival(row, t)?.exp())
    }
}

/// Failure time with `S(t | row) = u` under the generating model.
pub fn draw_failure_time(design: &SimulationDesign, row: &CovariateRow, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("uniform draw {u} must lie strictly inside (0, 1)")));
    }
    let (short, long, constant) = design.predictors(row)?;
    // S_yp = u^{exp(-x beta)}; solve [1 + (lambda/theta) R0]^{-theta} = S_yp for R0
    let log_u = u.ln() * (-constant).exp();
    let theta = long.exp();
    let odds = (long - short).exp() * (-log_u / theta).exp_m1();
    Ok(design.baseline.inverse_cumulative(odds.ln_1p()))
}

/// `min(t, c)` and event indicators with `c ~ U(0, nu)`.
pub fn apply_censoring<R: Rng + ?Sized>(times: &[f64], nu: f64, rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    let mut observed = Vec::with_capacity(times.len());
    let mut events = Vec::with_capacity(times.len());
    for &t in times {
        let c = nu * open_unit(rng);
        if t <= c {
            observed.push(t);
            events.push(true);
        } else {
            observed.push(c);
            events.push(false);
        }
    }
    (observed, events)
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn draw_times<R: Rng + ?Sized>(
    design: &SimulationDesign,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<CovariateRow>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(count);
    let mut times = Vec::with_capacity(count);
    for _ in 0..count {
        let row = design.draw_row(rng);
        let t = draw_failure_time(design, &row, open_unit(rng))?;
        rows.push(row);
        times.push(t);
    }
    Ok((rows, times))
}

/// Expected censored fraction under `U(0, nu)` censoring for a sample of
/// failure times: the mean of `min(1, t / nu)`.
pub fn expected_censoring(times: &[f64], nu: f64) -> f64 {
    times.iter().map(|&t| (t / nu).min(1.0)).sum::<f64>() / times.len() as f64
}

/// Censoring bound giving the target censored fraction, by bisection on a
/// pilot sample drawn from a stream reserved for tuning.
pub fn tune_censoring_bound(design: &SimulationDesign, target_rate: f64, seed: u64) -> Result<f64> {
    design.validate()?;
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::config(format!("target censoring rate {target_rate} must lie strictly inside (0, 1)")));
    }
    let mut rng = stream(seed, &[tag::CENSOR_TUNING]);
    let (_, mut times) = draw_times(design, TUNING_DRAWS, &mut rng)?;
    times.retain(|t| t.is_finite());
    if times.is_empty() {
        return Err(Error::config("pilot failure times are all infinite"));
    }
    let max = times.iter().cloned().fold(0.0, f64::max);
    let min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    // rate(nu) decreases from 1 (nu -> 0) to 0 (nu -> inf)
    let mut lo = (min * 1e-6).ln();
    let mut hi = max.ln();
    while expected_censoring(&times, hi.exp()) > target_rate {
        hi += 2.0;
        if hi > 700.0 {
            return Err(Error::config(format!("censoring rate {target_rate} is unattainable for this design")));
        }
    }
    if expected_censoring(&times, lo.exp()) < target_rate {
        return Err(Error::config(format!("censoring rate {target_rate} is unattainable for this design")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_censoring(&times, mid.exp()) > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// One replicate dataset; the stream is keyed by `(seed, replicate)`.
pub fn generate_dataset(design: &SimulationDesign, nu: f64, seed: u64, replicate: u64) -> Result<SurvivalDataset> {
    design.validate()?;
    if !(nu > 0.0) {
        return Err(Error::config(format!("censoring bound {nu} must be positive")));
    }
    let mut rng = stream(seed, &[tag::DATASET, replicate]);
    let (rows, times) = draw_times(design, design.n, &mut rng)?;
    let (observed, events) = apply_censoring(&times, nu, &mut rng);
    let (z, x): (Vec<_>, Vec<_>) = rows.into_iter().map(|r| (r.z, r.x)).unzip();
    let x = if design.p() == 0 { Vec::new() } else { x };
    SurvivalDataset::new(observed, events, z, x)?.with_names(design.z_names.clone(), design.x_names.clone())
}

/// Crossing time of the generating model between two profiles, by
/// bisection on the closed-form survival difference.
pub fn true_crossing_time(
    design: &SimulationDesign,
    a: &CovariateRow,
    b: &CovariateRow,
    t_max: f64,
) -> Result<Option<f64>> {
    let diff = |t: f64| -> Result<f64> { Ok(design.log_survival(a, t)? - design.log_survival(b, t)?) };
    let grid = 4096;
    let t_min = t_max * 1e-6;
    let step = (t_max / t_min).ln() / grid as f64;
    let mut prev_t = t_min;
    let mut prev = diff(prev_t)?;
    for i in 1..=grid {
        let t = t_min * (step * i as f64).exp();
        let cur = diff(t)?;
        if prev == 0.0 {
            return Ok(Some(prev_t));
        }
        if prev.signum() != cur.signum() {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let v = diff(mid)?;
                if v.signum() == prev.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
        prev_t = t;
        prev = cur;
    }
    Ok(None)
}

/// Monte Carlo summary for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct McMetrics {
    pub label: String,
    pub truth: f64,
    /// Mean estimate.
    pub est: f64,
    /// Mean reported standard error.
    pub se: f64,
    /// Standard deviation of the estimates (denominator `R - 1`).
    pub sde: f64,
    /// Relative bias in percent.
    pub rb: f64,
    /// Fraction of intervals covering the truth; NaN when no replicate has one.
    pub coverage: f64,
    pub count: usize,
}

impl McMetrics {
    pub fn compute(
        label: impl Into<String>,
        truth: f64,
        estimates: &[f64],
        ses: &[f64],
        intervals: &[Interval],
    ) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::config("no estimates to summarise"));
        }
        if ses.len() != estimates.len() || intervals.len() != estimates.len() {
            return Err(Error::dim("estimates, standard errors and intervals must have equal length"));
        }
        let (est, sde) = mean_sd(estimates);
        let se = ses.iter().sum::<f64>() / ses.len() as f64;
        // replicates without an interval do not count towards coverage
        let finite: Vec<_> = intervals.iter().filter(|iv| iv.lower.is_finite() && iv.upper.is_finite()).collect();
        let covered = finite.iter().filter(|iv| iv.contains(truth)).count();
        Ok(McMetrics {
            label: label.into(),
            truth,
            est,
            se,
            sde,
            rb: 100.0 * (est - truth) / truth.abs(),
            coverage: if finite.is_empty() { f64::NAN } else { covered as f64 / finite.len() as f64 },
            count: estimates.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Censoring {
    /// Fixed bound `nu`.
    Bound(f64),
    /// Tune `nu` to this expected censored fraction.
    Target(f64),
}

#[derive(Debug, Clone)]
pub struct McStudyConfig {
    pub variant: Variant,
    pub degree: Option<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub censoring: Censoring,
    pub level: f64,
    /// Bootstrap replicates per dataset for the crossing time; `None` skips
    /// the crossing-time study.
    pub bootstrap: Option<usize>,
}

impl McStudyConfig {
    pub fn new(variant: Variant, replicates: usize, seed: u64) -> Self {
        McStudyConfig {
            variant,
            degree: None,
            replicates,
            seed,
            censoring: Censoring::Target(0.3),
            level: 0.95,
            bootstrap: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateCrossing {
    pub estimate: Option<f64>,
    pub interval: Option<Interval>,
    pub spread: Option<f64>,
    pub no_root_fraction: f64,
}

/// Outcome of a single replicate. `estimates` and `standard_errors` cover
/// the regression coefficients only.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub censored_fraction: f64,
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub intervals: Vec<Interval>,
    pub crossing: Option<ReplicateCrossing>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct McStudyResult {
    pub variant: Variant,
    pub nu: f64,
    pub replicates: usize,
    pub failures: usize,
    /// More than 10% of replicates failed.
    pub flagged: bool,
    pub mean_censored_fraction: f64,
    pub labels: Vec<String>,
    pub truth: Vec<f64>,
    pub metrics: Vec<McMetrics>,
    pub crossing_truth: Option<f64>,
    pub crossing: Option<McMetrics>,
    pub crossing_no_root: usize,
    pub outcomes: Vec<ReplicateOutcome>,
}

impl McStudyResult {
    pub fn metric(&self, label: &str) -> Option<&McMetrics> {
        self.metrics.iter().find(|m| m.label == label)
    }
}

/// Profiles compared in two-sample crossing studies (`z = 0` vs `z = 1`).
pub fn two_sample_profiles(design: &SimulationDesign) -> Option<(CovariateRow, CovariateRow)> {
    if design.q() == 1 && design.p() == 0 {
        Some((CovariateRow::z_only(vec![0.0]), CovariateRow::z_only(vec![1.0])))
    } else {
        None
    }
}

fn run_replicate(
    design: &SimulationDesign,
    config: &McStudyConfig,
    nu: f64,
    replicate: u64,
    profiles: Option<&(CovariateRow, CovariateRow)>,
) -> ReplicateOutcome {
    let mut outcome = ReplicateOutcome {
        replicate,
        censored_fraction: f64::NAN,
        estimates: Vec::new(),
        standard_errors: Vec::new(),
        intervals: Vec::new(),
        crossing: None,
        failure: None,
    };
    let data = match generate_dataset(design, nu, config.seed, replicate) {
        Ok(d) => d,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    outcome.censored_fraction = data.censored_fraction();
    let mut fit_config = FitConfig::new(config.variant);
    fit_config.degree = config.degree;
    let fit = match fit_ml(&data, &fit_config) {
        Ok(f) => f,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    if !fit.converged() {
        outcome.failure = Some(format!("fit did not converge: {:?}", fit.status()));
        return outcome;
    }
    let k = fit.layout().regression_len();
    let (Some(se), Ok(ivs)) = (fit.standard_errors(), fit.wald_intervals(config.level)) else {
        outcome.failure = Some("no covariance at the optimum".into());
        return outcome;
    };
    outcome.estimates = fit.estimates()[..k].to_vec();
    outcome.standard_errors = se[..k].to_vec();
    outcome.intervals = ivs[..k].to_vec();

    if let (Some(b), Some((pa, pb))) = (config.bootstrap, profiles) {
        let result = CrossingQuery::for_data(&data, pa.clone(), pb.clone()).and_then(|query| {
            let boot = BootstrapConfig {
                replicates: b,
                level: config.level,
                seed: crate::rng::stream_key(config.seed, &[tag::BOOTSTRAP, replicate]),
                fit: fit_config.clone(),
            };
            bootstrap_crossing(&data, &query, &boot)
        });
        match result {
            Ok(est) => {
                let spread = if est.draws.len() >= 2 { Some(mean_sd(&est.draws).1) } else { None };
                outcome.crossing = Some(ReplicateCrossing {
                    estimate: est.t_star,
                    interval: est.interval,
                    spread,
                    no_root_fraction: est.no_root_fraction(),
                });
            }
            Err(e) => outcome.failure = Some(format!("bootstrap failed: {e}")),
        }
    } else if let Some((pa, pb)) = profiles {
        // point estimate only
        if let (Ok(params), Ok(query)) = (fit.params(), CrossingQuery::for_data(&data, pa.clone(), pb.clone())) {
            let estimate = crossing_time(&params, &query).ok().flatten().map(|r| r.time);
            outcome.crossing =
                Some(ReplicateCrossing { estimate, interval: None, spread: None, no_root_fraction: 0.0 });
        }
    }
    outcome
}

/// Monte Carlo study: generate, fit and summarise `replicates` datasets.
/// Replicates run in parallel; results do not depend on the thread count.
pub fn run_mc_study(design: &SimulationDesign, config: &McStudyConfig) -> Result<McStudyResult> {
    design.validate()?;
    if config.replicates < 2 {
        return Err(Error::config("a Monte Carlo study needs at least 2 replicates"));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::config("interval level must lie in (0, 1)"));
    }
    let truth = design.truth(config.variant)?;
    let nu = match config.censoring {
        Censoring::Bound(nu) if nu > 0.0 => nu,
        Censoring::Bound(nu) => return Err(Error::config(format!("censoring bound {nu} must be positive"))),
        Censoring::Target(rate) => tune_censoring_bound(design, rate, config.seed)?,
    };
    let profiles = two_sample_profiles(design);
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(design, config, nu, r, profiles.as_ref()))
        .collect();

    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.failure.is_none()).collect();
    let failures = outcomes.len() - ok.len();
    let labels = {
        let merged_z: Vec<String> = if config.variant.has_constant_block() {
            design.z_names.clone()
        } else {
            design.z_names.iter().chain(&design.x_names).cloned().collect()
        };
        let x_names = if config.variant.has_constant_block() { design.x_names.clone() } else { Vec::new() };
        let mut l: Vec<String> = merged_z.iter().map(|n| format!("psi[{n}]")).collect();
        l.extend(merged_z.iter().map(|n| format!("phi[{n}]")));
        l.extend(x_names.iter().map(|n| format!("beta[{n}]")));
        l
    };
    let mut metrics = Vec::new();
    if !ok.is_empty() {
        for (j, (label, &t)) in labels.iter().zip(&truth).enumerate() {
            let est: Vec<f64> = ok.iter().map(|o| o.estimates[j]).collect();
            let se: Vec<f64> = ok.iter().map(|o| o.standard_errors[j]).collect();
            let iv: Vec<Interval> = ok.iter().map(|o| o.intervals[j]).collect();
            metrics.push(McMetrics::compute(label.clone(), t, &est, &se, &iv)?);
        }
    }

    let mut crossing_truth = None;
    let mut crossing = None;
    let mut crossing_no_root = 0;
    if let Some((pa, pb)) = &profiles {
        // horizon well beyond any plausible observation window
        let horizon = design.baseline.inverse_cumulative(50.0);
        crossing_truth = true_crossing_time(design, pa, pb, horizon)?;
        if let Some(truth) = crossing_truth {
            let mut est = Vec::new();
            let mut se = Vec::new();
            let mut iv = Vec::new();
            for o in &ok {
                match o.crossing.as_ref().and_then(|c| c.estimate.map(|e| (e, c))) {
                    Some((e, c)) => {
                        est.push(e);
                        se.push(c.spread.unwrap_or(f64::NAN));
                        iv.push(c.interval.unwrap_or(Interval { lower: f64::NAN, upper: f64::NAN }));
                    }
                    None => crossing_no_root += 1,
                }
            }
            if !est.is_empty() {
                crossing = Some(McMetrics::compute("t_star", truth, &est, &se, &iv)?);
            }
        }
    }
    let mean_censored_fraction =
        outcomes.iter().map(|o| o.censored_fraction).filter(|v| v.is_finite()).sum::<f64>() / outcomes.len() as f64;
    Ok(McStudyResult {
        variant: config.variant,
        nu,
        replicates: config.replicates,
        failures,
        flagged: failures * 10 > config.replicates,
        mean_censored_fraction,
        labels,
        truth,
        metrics,
        crossing_truth,
        crossing,
        crossing_no_root,
        outcomes,
    })
}
