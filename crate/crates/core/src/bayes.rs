//! Bayesian fitting: independent normal priors, an adaptive random-walk
//! Metropolis sampler on the unconstrained scale, and convergence
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bernstein::BpBasis;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::fit::{basis_for, data_for_variant, initial_point, observed_information, FitConfig, Interval};
use crate::likelihood::{Likelihood, ParameterLayout};
use crate::model::{Variant, YpParameters};
use crate::optim::{minimize, BfgsConfig};
use crate::rng::{stream, tag};

/// R-hat above this flags a sample as not converged.
pub const RHAT_THRESHOLD: f64 = 1.05;

/// Mean and standard deviation of a normal prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::config(format!("prior sd {sd} must be positive and mean {mean} finite")));
        }
        Ok(Self { mean, sd })
    }

    pub fn log_density(&self, v: f64) -> f64 {
        let z = (v - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Independent normal priors per block; the baseline block is on the log
/// scale of the coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub psi: NormalPrior,
    pub phi: NormalPrior,
    pub beta: NormalPrior,
    pub baseline: NormalPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::uniform_sd(4.0)
    }
}

impl PriorSpec {
    /// Mean zero and the same standard deviation for every block.
    pub fn uniform_sd(sd: f64) -> Self {
        let p = NormalPrior { mean: 0.0, sd };
        PriorSpec { psi: p, phi: p, beta: p, baseline: p }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.psi, self.phi, self.beta, self.baseline] {
            NormalPrior::new(p.mean, p.sd)?;
        }
        Ok(())
    }
}

/// Sum of the independent normal log-densities over all blocks.
pub fn log_prior(prior: &PriorSpec, layout: &ParameterLayout, theta: &[f64]) -> Result<f64> {
    if theta.len() != layout.dim() {
        return Err(Error::dim(format!("parameter vector has {} entries, layout needs {}", theta.len(), layout.dim())));
    }
    let block = |p: &NormalPrior, r: std::ops::Range<usize>| theta[r].iter().map(|&v| p.log_density(v)).sum::<f64>();
    Ok(block(&prior.psi, layout.psi())
        + block(&prior.phi, layout.phi())
        + block(&prior.beta, layout.beta())
        + block(&prior.baseline, layout.baseline()))
}

/// Gradient of [`log_prior`], added into `grad`.
fn add_log_prior_gradient(prior: &PriorSpec, layout: &ParameterLayout, theta: &[f64], grad: &mut [f64]) {
    let blocks = [
        (prior.psi, layout.psi()),
        (prior.phi, layout.phi()),
        (prior.beta, layout.beta()),
        (prior.baseline, layout.baseline()),
    ];
    for (p, r) in blocks {
        for i in r {
            grad[i] -= (theta[i] - p.mean) / (p.sd * p.sd);
        }
    }
}

/// Log-likelihood plus log-prior.
pub fn log_posterior(prior: &PriorSpec, lik: &Likelihood, theta: &[f64]) -> Result<f64> {
    Ok(lik.value(theta) + log_prior(prior, lik.layout(), theta)?)
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub variant: Variant,
    pub degree: Option<usize>,
    pub chains: usize,
    /// Iterations per chain including warmup.
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Trajectories stop doubling at `2^max_tree_depth` leapfrog steps.
    pub max_tree_depth: usize,
    /// Mean acceptance statistic targeted by step-size adaptation.
    pub target_accept: f64,
}

impl SamplerConfig {
    pub fn new(variant: Variant, seed: u64) -> Self {
        SamplerConfig {
            variant,
            degree: None,
            chains: 4,
            iterations: 2000,
            warmup: 1000,
            seed,
            max_tree_depth: 10,
            target_accept: 0.8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::config("at least one chain is required"));
        }
        if self.warmup >= self.iterations {
            return Err(Error::config(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if self.iterations - self.warmup < 4 {
            return Err(Error::config("need at least 4 post-warmup iterations per chain"));
        }
        if !(1..=15).contains(&self.max_tree_depth) {
            return Err(Error::config("maximum tree depth must lie in 1..=15"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Raw output of the sampler on an arbitrary log-density.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// `draws[chain][iteration]`, post-warmup, on the sampling scale.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// Mean acceptance statistic per chain after warmup.
    pub acceptance: Vec<f64>,
    /// Divergent transitions per chain after warmup.
    pub divergences: Vec<usize>,
}

fn cholesky_or_diag(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let d = cov.nrows();
    let mut jittered = cov.clone();
    let scale = (0..d).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    for i in 0..d {
        jittered[(i, i)] += 1e-8 * scale;
    }
    match jittered.cholesky() {
        Some(ch) => ch.l(),
        None => DMatrix::from_fn(d, d, |i, j| if i == j { cov[(i, i)].abs().max(1e-12).sqrt() } else { 0.0 }),
    }
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn sample_covariance(points: &[Vec<f64>]) -> DMatrix<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    DMatrix::from_fn(d, d, |i, j| points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / (n - 1.0))
}

/// Energy error beyond which a transition counts as divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Target with gradient in whitened coordinates `x = L y`.
struct Whitened<'a, F> {
    density: &'a F,
    chol: DMatrix<f64>,
    scratch_grad: Vec<f64>,
}

impl<F> Whitened<'_, F>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn eval(&mut self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let x = &self.chol * y;
        let v = (self.density)(x.as_slice(), &mut self.scratch_grad);
        let g = DVector::from_column_slice(&self.scratch_grad);
        if !v.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return (f64::NEG_INFINITY, DVector::zeros(y.len()));
        }
        (v, self.chol.tr_mul(&g))
    }
}

#[derive(Clone)]
struct Phase {
    q: DVector<f64>,
    p: DVector<f64>,
    grad: DVector<f64>,
    logp: f64,
}

impl Phase {
    fn energy(&self) -> f64 {
        -self.logp + 0.5 * self.p.norm_squared()
    }
}

struct Subtree {
    left: Phase,
    right: Phase,
    proposal: Phase,
    log_weight: f64,
    momentum_sum: DVector<f64>,
    /// Trajectory turned back on itself or diverged; the subtree is discarded.
    stop: bool,
    divergent: bool,
    accept_sum: f64,
    steps: usize,
}

fn leapfrog<F>(target: &mut Whitened<'_, F>, z: &Phase, eps: f64) -> Phase
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let p_half = &z.p + &z.grad * (0.5 * eps);
    let q = &z.q + &p_half * eps;
    let (logp, grad) = target.eval(&q);
    let p = &p_half + &grad * (0.5 * eps);
    Phase { q, p, grad, logp }
}

fn turned(momentum_sum: &DVector<f64>, left: &DVector<f64>, right: &DVector<f64>) -> bool {
    momentum_sum.dot(left) <= 0.0 || momentum_sum.dot(right) <= 0.0
}

/// Recursive doubling step of the multinomial no-U-turn sampler.
fn build_tree<F, R>(target: &mut Whitened<'_, F>, rng: &mut R, edge: &Phase, depth: usize, eps: f64, h0: f64) -> Subtree
where
    F: Fn(&[f64], &mut [f64]) -> f64,
    R: Rng + ?Sized,
{
    if depth == 0 {
        let z = leapfrog(target, edge, eps);
        let h = z.energy();
        let delta = if h.is_finite() { h0 - h } else { f64::NEG_INFINITY };
        let divergent = -delta > MAX_ENERGY_ERROR;
        return Subtree {
            left: z.clone(),
            right: z.clone(),
            momentum_sum: z.p.clone(),
            proposal: z,
            log_weight: delta,
            stop: divergent,
            divergent,
            accept_sum: delta.min(0.0).exp(),
            steps: 1,
        };
    }
    let first = build_tree(target, rng, edge, depth - 1, eps, h0);
    if first.stop {
        return first;
    }
    let outer = if eps > 0.0 { &first.right } else { &first.left };
    let second = build_tree(target, rng, outer, depth - 1, eps, h0);
    let accept_sum = first.accept_sum + second.accept_sum;
    let steps = first.steps + second.steps;
    if second.stop {
        return Subtree { accept_sum, steps, ..second };
    }
    let log_weight = log_add(first.log_weight, second.log_weight);
    let proposal =
        if rng.random::<f64>().ln() < second.log_weight - log_weight { second.proposal } else { first.proposal };
    let (left, right) = if eps > 0.0 { (first.left, second.right) } else { (second.left, first.right) };
    let momentum_sum = &first.momentum_sum + &second.momentum_sum;
    let stop = turned(&momentum_sum, &left.p, &right.p);
    Subtree { left, right, proposal, log_weight, momentum_sum, stop, divergent: false, accept_sum, steps }
}

fn log_add(a: f64, b: f64) -> f64 {
    crate::numeric::log_add_exp(a, b)
}

struct Transition {
    state: Phase,
    accept: f64,
    divergent: bool,
}

fn nuts_transition<F, R>(
    target: &mut Whitened<'_, F>,
    rng: &mut R,
    start: &Phase,
    eps: f64,
    max_depth: usize,
) -> Transition
where
    F: Fn(&[f64], &mut [f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut z0 = start.clone();
    z0.p = standard_normal_vec(rng, z0.q.len());
    let h0 = z0.energy();
    let mut left = z0.clone();
    let mut right = z0.clone();
    let mut momentum_sum = z0.p.clone();
    let mut proposal = z0;
    let mut log_weight = 0.0;
    let mut accept_sum = 0.0;
    let mut steps = 0usize;
    let mut divergent = false;
    for depth in 0..max_depth {
        let forward = rng.random::<bool>();
        let tree = if forward {
            build_tree(target, rng, &right, depth, eps, h0)
        } else {
            build_tree(target, rng, &left, depth, -eps, h0)
        };
        accept_sum += tree.accept_sum;
        steps += tree.steps;
        if tree.stop {
            divergent = tree.divergent;
            break;
        }
        // biased progressive sampling favours the newer half
        if rng.random::<f64>().ln() < tree.log_weight - log_weight {
            proposal = tree.proposal;
        }
        log_weight = log_add(log_weight, tree.log_weight);
        momentum_sum += &tree.momentum_sum;
        if forward {
            right = tree.right;
        } else {
            left = tree.left;
        }
        if turned(&momentum_sum, &left.p, &right.p) {
            break;
        }
    }
    Transition { state: proposal, accept: accept_sum / steps.max(1) as f64, divergent }
}

/// Nesterov dual averaging of the log step size.
struct StepSize {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: f64,
    target: f64,
}

impl StepSize {
    fn new(eps: f64, target: f64) -> Self {
        StepSize { mu: (10.0 * eps).ln(), log_eps: eps.ln(), log_eps_bar: 0.0, h_bar: 0.0, count: 0.0, target }
    }

    fn update(&mut self, accept: f64) {
        self.count += 1.0;
        let w = 1.0 / (self.count + 10.0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - self.count.sqrt() / 0.05 * self.h_bar;
        let k = self.count.powf(-0.75);
        self.log_eps_bar = k * self.log_eps + (1.0 - k) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Step size where one leapfrog step's acceptance crosses one half.
fn initial_step_size<F, R>(target: &mut Whitened<'_, F>, rng: &mut R, z: &Phase) -> f64
where
    F: Fn(&[f64], &mut [f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut eps = 1.0;
    let mut z0 = z.clone();
    z0.p = standard_normal_vec(rng, z.q.len());
    let h0 = z0.energy();
    let delta = |target: &mut Whitened<'_, F>, eps: f64| {
        let h = leapfrog(target, &z0, eps).energy();
        if h.is_finite() {
            h0 - h
        } else {
            f64::NEG_INFINITY
        }
    };
    let up = delta(target, eps) > 0.5f64.ln();
    for _ in 0..60 {
        let d = delta(target, eps);
        if up != (d > 0.5f64.ln()) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps * 0.5 };
    }
    eps
}

/// Ends of the windows in which the metric is re-estimated.
fn metric_windows(warmup: usize) -> Vec<usize> {
    if warmup < 20 {
        return Vec::new();
    }
    let (init, term, base) = if warmup < 150 {
        let init = warmup * 15 / 100;
        let term = warmup / 10;
        (init, term, warmup - init - term)
    } else {
        (75, 50, 25)
    };
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < slow_end {
        let mut end = start + size;
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

fn windowed_covariance(points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len() as f64;
    let mut cov = sample_covariance(points) * (n / (n + 5.0));
    for i in 0..cov.nrows() {
        cov[(i, i)] += 1e-3 * 5.0 / (n + 5.0);
    }
    cov
}

struct ChainRun {
    draws: Vec<Vec<f64>>,
    acceptance: f64,
    divergences: usize,
}

fn run_chain<F>(density: &F, start: &[f64], covariance: &DMatrix<f64>, config: &SamplerConfig, chain: u64) -> ChainRun
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    let d = start.len();
    let mut rng = stream(config.seed, &[tag::CHAIN, chain]);
    let mut target = Whitened { density, chol: cholesky_or_diag(covariance), scratch_grad: vec![0.0; d] };
    let whiten = |chol: &DMatrix<f64>, x: &DVector<f64>| chol.solve_lower_triangular(x).unwrap_or_else(|| x.clone());
    let mut x = DVector::from_column_slice(start);
    let mut q = whiten(&target.chol, &x);
    let (logp, grad) = target.eval(&q);
    let mut state = Phase { q: q.clone(), p: DVector::zeros(d), grad, logp };
    let mut step = StepSize::new(initial_step_size(&mut target, &mut rng, &state), config.target_accept);
    let windows = metric_windows(config.warmup);
    let init_buffer = if config.warmup < 150 { config.warmup * 15 / 100 } else { 75 };
    let slow = init_buffer..windows.last().copied().unwrap_or(0);
    let mut window: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::with_capacity(config.iterations - config.warmup);
    let mut accept_total = 0.0;
    let mut divergences = 0;

    for it in 0..config.iterations {
        let warm = it < config.warmup;
        let eps = if warm { step.current() } else { step.adapted() };
        let t = nuts_transition(&mut target, &mut rng, &state, eps, config.max_tree_depth);
        state = t.state;
        x = &target.chol * &state.q;
        if warm {
            step.update(t.accept);
            if slow.contains(&it) {
                window.push(x.as_slice().to_vec());
            }
            if windows.contains(&(it + 1)) && window.len() > d + 2 {
                target.chol = cholesky_or_diag(&windowed_covariance(&window));
                window.clear();
                q = whiten(&target.chol, &x);
                let (logp, grad) = target.eval(&q);
                state = Phase { q: q.clone(), p: DVector::zeros(d), grad, logp };
                step = StepSize::new(initial_step_size(&mut target, &mut rng, &state), config.target_accept);
            }
        } else {
            accept_total += t.accept;
            divergences += usize::from(t.divergent);
            kept.push(x.as_slice().to_vec());
        }
    }
    ChainRun { draws: kept, acceptance: accept_total / (config.iterations - config.warmup) as f64, divergences }
}

/// Run independent no-U-turn chains on `density`, which returns the log
/// density and writes its gradient. Chains start from `center` perturbed by
/// draws from `covariance`, which also seeds the metric. Step size and a
/// dense metric adapt during warmup only.
pub fn sample_log_density<F>(
    density: &F,
    center: &[f64],
    covariance: &DMatrix<f64>,
    config: &SamplerConfig,
) -> Result<ChainOutput>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    config.validate()?;
    let d = center.len();
    if covariance.nrows() != d || covariance.ncols() != d {
        return Err(Error::dim("initial covariance does not match the dimension"));
    }
    let mut scratch = vec![0.0; d];
    if !density(center, &mut scratch).is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let start_chol = cholesky_or_diag(covariance);
    let runs: Vec<ChainRun> = (0..config.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(config.seed, &[tag::CHAIN, c, 0]);
            let mut grad = vec![0.0; d];
            // dispersed start; fall back to the center if it lands somewhere invalid
            let mut start = DVector::from_column_slice(center);
            for _ in 0..20 {
                let cand = DVector::from_column_slice(center) + &start_chol * standard_normal_vec(&mut rng, d);
                if density(cand.as_slice(), &mut grad).is_finite() {
                    start = cand;
                    break;
                }
            }
            run_chain(density, start.as_slice(), covariance, config, c)
        })
        .collect();
    let mut out = ChainOutput { draws: Vec::new(), acceptance: Vec::new(), divergences: Vec::new() };
    for run in runs {
        out.draws.push(run.draws);
        out.acceptance.push(run.acceptance);
        out.divergences.push(run.divergences);
    }
    Ok(out)
}

/// Split-R-hat for one parameter; `chains[c][i]`.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    if half < 2 {
        return f64::NAN;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> =
        parts.iter().zip(&means).map(|(p, m)| p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).collect();
    let k = parts.len() as f64;
    let grand = means.iter().sum::<f64>() / k;
    let between = n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
    let within = vars.iter().sum::<f64>() / k;
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let within = vars.iter().sum::<f64>() / m as f64;
    if within == 0.0 {
        return (m * n) as f64;
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let between = if m > 1 {
        n as f64 * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (within - autocov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 + rho(1) } else { rho(lag) + rho(lag + 1) };
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / ((m * n) as f64).log10().max(1.0));
    (m * n) as f64 / tau
}

/// Shortest interval holding `ceil(level * N)` of the sorted draws.
pub fn hpd_interval(draws: &[f64], level: f64) -> Result<Interval> {
    if draws.len() < 2 {
        return Err(Error::config("an HPD interval needs at least 2 draws"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level {level} must lie in (0, 1)")));
    }
    if draws.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("draws contain NaN"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    for i in 1..=n - k {
        if sorted[i + k - 1] - sorted[i] < sorted[best + k - 1] - sorted[best] {
            best = i;
        }
    }
    Ok(Interval { lower: sorted[best], upper: sorted[best + k - 1] })
}

/// Posterior draws with per-parameter diagnostics. Draws are stored on the
/// sampling scale; accessors return the natural scale.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    layout: ParameterLayout,
    basis: BpBasis,
    labels: Vec<String>,
    draws: Vec<Vec<f64>>,
    chain_ids: Vec<usize>,
    warmup: usize,
    rhat: Vec<f64>,
    ess: Vec<f64>,
    acceptance: Vec<f64>,
    divergences: Vec<usize>,
    mode: Vec<f64>,
}

impl PosteriorSample {
    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn basis(&self) -> BpBasis {
        self.basis
    }

    pub fn variant(&self) -> Variant {
        self.layout.variant()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn draw_count(&self) -> usize {
        self.draws.len()
    }

    pub fn chain_ids(&self) -> &[usize] {
        &self.chain_ids
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    /// Natural-scale draw `i`.
    pub fn draw(&self, i: usize) -> Vec<f64> {
        self.layout.to_natural(&self.draws[i])
    }

    /// Natural-scale draws of parameter `j`, ordered by chain then iteration.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let baseline = self.layout.baseline().contains(&j);
        self.draws.iter().map(|d| if baseline { d[j].exp() } else { d[j] }).collect()
    }

    pub fn params_at(&self, i: usize) -> Result<YpParameters> {
        self.layout.to_params(&self.draws[i], self.basis)
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.layout.dim()).map(|j| crate::numeric::mean_sd(&self.column(j)).0).collect()
    }

    pub fn sds(&self) -> Vec<f64> {
        (0..self.layout.dim()).map(|j| crate::numeric::mean_sd(&self.column(j)).1).collect()
    }

    pub fn hpd(&self, j: usize, level: f64) -> Result<Interval> {
        hpd_interval(&self.column(j), level)
    }

    pub fn rhat(&self) -> &[f64] {
        &self.rhat
    }

    pub fn ess(&self) -> &[f64] {
        &self.ess
    }

    pub fn acceptance(&self) -> &[f64] {
        &self.acceptance
    }

    /// Divergent transitions per chain after warmup.
    pub fn divergences(&self) -> &[usize] {
        &self.divergences
    }

    /// Posterior mode on the natural scale (the sampler's starting center).
    pub fn mode(&self) -> Vec<f64> {
        self.layout.to_natural(&self.mode)
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn converged(&self) -> bool {
        self.rhat.iter().all(|r| *r <= RHAT_THRESHOLD)
    }
}

/// Posterior mode and the inverse negative Hessian of the log-posterior
/// there, on the unconstrained scale.
pub fn posterior_mode(prior: &PriorSpec, lik: &Likelihood, start: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    prior.validate()?;
    let layout = *lik.layout();
    let objective = |theta: &[f64], grad: &mut [f64]| {
        let v = lik.value_and_gradient(theta, grad);
        let lp = log_prior(prior, &layout, theta).unwrap_or(f64::NEG_INFINITY);
        add_log_prior_gradient(prior, &layout, theta, grad);
        for g in grad.iter_mut() {
            *g = -*g;
        }
        -(v + lp)
    };
    let out = minimize(objective, start, &BfgsConfig::default())?;
    let mut info = observed_information(lik, &out.x);
    let blocks = [
        (prior.psi, layout.psi()),
        (prior.phi, layout.phi()),
        (prior.beta, layout.beta()),
        (prior.baseline, layout.baseline()),
    ];
    for (p, r) in blocks {
        for i in r {
            info[(i, i)] += 1.0 / (p.sd * p.sd);
        }
    }
    let d = info.nrows();
    let eig = info.symmetric_eigen();
    // clamp tiny or negative curvature so the proposal stays proper
    let floor = eig.eigenvalues.max().abs().max(1.0) * 1e-10;
    let mut cov = DMatrix::zeros(d, d);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        cov += v * v.transpose() / lam.max(floor);
    }
    Ok((out.x, (&cov + cov.transpose()) * 0.5))
}

/// Draw from the posterior of a YP model. Chains start around the posterior
/// mode, run in parallel and are merged by chain id.
pub fn sample_posterior(prior: &PriorSpec, data: &SurvivalDataset, config: &SamplerConfig) -> Result<PosteriorSample> {
    prior.validate()?;
    config.validate()?;
    let data = data_for_variant(data, config.variant)?;
    let mut fit_cfg = FitConfig::new(config.variant);
    fit_cfg.degree = config.degree;
    let basis = basis_for(&data, &fit_cfg)?;
    let lik = Likelihood::new(&data, config.variant, basis)?;
    let layout = *lik.layout();
    let (mode, cov) = posterior_mode(prior, &lik, &initial_point(&data, &layout))?;
    let density = |theta: &[f64], grad: &mut [f64]| {
        let v = lik.value_and_gradient(theta, grad);
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        add_log_prior_gradient(prior, &layout, theta, grad);
        v + log_prior(prior, &layout, theta).unwrap_or(f64::NEG_INFINITY)
    };
    let out = sample_log_density(&density, &mode, &cov, config)?;
    let d = layout.dim();
    let mut rhat = Vec::with_capacity(d);
    let mut ess = Vec::with_capacity(d);
    for j in 0..d {
        let baseline = layout.baseline().contains(&j);
        let per_chain: Vec<Vec<f64>> =
            out.draws.iter().map(|c| c.iter().map(|v| if baseline { v[j].exp() } else { v[j] }).collect()).collect();
        rhat.push(split_rhat(&per_chain));
        ess.push(effective_sample_size(&per_chain));
    }
    let mut draws = Vec::new();
    let mut chain_ids = Vec::new();
    for (c, chain) in out.draws.into_iter().enumerate() {
        chain_ids.extend(std::iter::repeat_n(c, chain.len()));
        draws.extend(chain);
    }
    Ok(PosteriorSample {
        layout,
        basis,
        labels: layout.labels(data.z_names(), data.x_names()),
        draws,
        chain_ids,
        warmup: config.warmup,
        rhat,
        ess,
        acceptance: out.acceptance,
        divergences: out.divergences,
        mode,
    })
}
