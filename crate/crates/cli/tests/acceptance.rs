//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Set `YPBP_IPASS_DATA` to the reconstructed IPASS dataset to run the
//! real-data check; it is skipped otherwise.

use std::path::Path;
use std::process::{Command as Process, ExitCode};
use std::time::Instant;

use tempfile::TempDir;
use ypbp::bayes::NormalPrior;
use ypbp::simulation::{
    draw_failure_time, generate_dataset, run_mc_study, tune_censoring_bound, McStudyConfig, McStudyResult,
    SimulationDesign,
};
use ypbp::{
    crossing_time, fit_ml, sample_posterior, Baseline, BaselineCoefficients, BaselineKind, BpBasis, CovariateRow,
    CrossingQuery, FitConfig, Likelihood, PriorSpec, SamplerConfig, Variant, YpParameters,
};
use ypbp_cli::dataset_file::{parse_dataset, save_dataset};

const BIN: &str = env!("CARGO_BIN_EXE_ypbp");

// scenario I study
const SCENARIO_I_REPLICATES: usize = 200;
const SAMPLE_SIZE: usize = 500;
const MAX_ABS_RB_I: f64 = 10.0;
const COVERAGE_I: (f64, f64) = (0.90, 0.98);
const STUDY_SEED: u64 = 20_240_601;
// crossing time within the scenario I study
const BOOTSTRAP: usize = 500;
const MAX_ABS_RB_CROSSING: f64 = 8.0;
const COVERAGE_CROSSING: (f64, f64) = (0.90, 0.98);
// scenario II studies
const SCENARIO_II_REPLICATES: usize = 100;
const MAX_ABS_RB_II: f64 = 12.0;
const COVERAGE_II: (f64, f64) = (0.89, 0.98);
const COMPARISON_SEEDS: [u64; 3] = [1, 2, 3];
const COMPARISON_WINS: usize = 2;
// bayesian fit
const BAYES_SEED: u64 = 7;
const MAX_SDS_FROM_TRUTH: f64 = 3.0;
const MAX_RHAT: f64 = 1.05;
const FLAT_SD: f64 = 1.0e3;
const MAX_MEAN_VS_MLE: f64 = 0.05;
// analytic invariants
const REDUCTION_TOL: f64 = 1e-12;
const PARTITION_TOL: f64 = 1e-10;
const QUADRATURE_TOL: f64 = 1e-8;
const HAZARD_FD_TOL: f64 = 1e-4;
const INVERSE_TOL: f64 = 1e-10;
const GRADIENT_FD_TOL: f64 = 1e-4;
// ipass data
const IPASS_PSI: (f64, f64) = (0.9, 1.6);
const IPASS_PHI: (f64, f64) = (-1.5, -1.1);
const IPASS_CROSSING: (f64, f64) = (5.0, 7.0);
// determinism
const THREADS: [&str; 2] = ["1", "4"];

enum Verdict {
    Pass,
    Fail,
    Skip,
}

type Check = fn() -> Outcome;

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome { verdict: if ok { Verdict::Pass } else { Verdict::Fail }, detail }
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

fn coefficient_checks(result: &McStudyResult, max_rb: f64, coverage: (f64, f64), notes: &mut Vec<String>) -> bool {
    let mut ok = result.failures * 10 <= result.replicates;
    for m in &result.metrics {
        let good = m.rb.abs() <= max_rb && within(m.coverage, coverage);
        ok &= good;
        notes.push(format!("{} rb={:+.2}% cov={:.3}{}", m.label, m.rb, m.coverage, if good { "" } else { " !" }));
    }
    ok
}

/// Scenario I crossing time by bisection on the closed-form generating model.
fn scenario_i_crossing() -> f64 {
    let design = SimulationDesign::scenario_i(1);
    let (shape, rate) = (design.baseline.shape(), design.baseline.rate());
    let (psi, phi) = (design.psi[0], design.phi[0]);
    let survival = |z: f64, t: f64| {
        let odds = (rate * t.powf(shape)).exp_m1();
        let (short, long) = ((z * psi).exp(), (z * phi).exp());
        (1.0 + short / long * odds).powf(-long)
    };
    let diff = |t: f64| survival(0.0, t) - survival(1.0, t);
    let (mut lo, mut hi) = (1e-3, 100.0);
    assert!(diff(lo) * diff(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diff(mid).signum() == diff(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn scenario_i_study() -> McStudyResult {
    let design = SimulationDesign::scenario_i(SAMPLE_SIZE);
    let mut config = McStudyConfig::new(Variant::M1, SCENARIO_I_REPLICATES, STUDY_SEED);
    config.bootstrap = Some(BOOTSTRAP);
    run_mc_study(&design, &config).expect("scenario I study")
}

fn criterion_1(study: &McStudyResult) -> Outcome {
    let mut notes = Vec::new();
    let ok = coefficient_checks(study, MAX_ABS_RB_I, COVERAGE_I, &mut notes);
    notes.push(format!("failures={}", study.failures));
    judge(ok, notes.join(", "))
}

fn criterion_2(study: &McStudyResult) -> Outcome {
    let oracle = scenario_i_crossing();
    let Some(m) = &study.crossing else {
        return judge(false, "no crossing metrics".into());
    };
    let truth_ok = study.crossing_truth.is_some_and(|t| (t - oracle).abs() <= 1e-6 * oracle);
    let ok = truth_ok
        && (m.truth - oracle).abs() <= 1e-6 * oracle
        && m.rb.abs() <= MAX_ABS_RB_CROSSING
        && within(m.coverage, COVERAGE_CROSSING);
    judge(
        ok,
        format!(
            "oracle t*={oracle:.4} engine truth={:.4} est={:.4} rb={:+.2}% cov={:.3} no_root={}",
            study.crossing_truth.unwrap_or(f64::NAN),
            m.est,
            m.rb,
            m.coverage,
            study.crossing_no_root
        ),
    )
}

fn mean_abs_rb(result: &McStudyResult, labels: &[String]) -> f64 {
    let rbs: Vec<f64> = labels.iter().map(|l| result.metric(l).expect("shared label").rb.abs()).collect();
    rbs.iter().sum::<f64>() / rbs.len() as f64
}

fn criterion_3() -> Outcome {
    let design = SimulationDesign::scenario_ii(SAMPLE_SIZE);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut wins = 0;
    for (i, &seed) in COMPARISON_SEEDS.iter().enumerate() {
        let run = |variant| run_mc_study(&design, &McStudyConfig::new(variant, SCENARIO_II_REPLICATES, seed));
        let (m1, star) = match (run(Variant::M1), run(Variant::M1Star)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return judge(false, format!("seed {seed}: {e}")),
        };
        // coefficient bounds apply to the first seed's study; the others feed
        // the M1 versus M1* comparison only
        if i == 0 {
            let mut m1_notes = Vec::new();
            let mut star_notes = Vec::new();
            ok &= coefficient_checks(&m1, MAX_ABS_RB_II, COVERAGE_II, &mut m1_notes);
            ok &= coefficient_checks(&star, MAX_ABS_RB_II, COVERAGE_II, &mut star_notes);
            notes.push(format!("seed {seed} m1: {}", m1_notes.join(", ")));
            notes.push(format!("seed {seed} m1-star: {}", star_notes.join(", ")));
        }
        let shared: Vec<String> = m1.labels.iter().filter(|l| star.labels.contains(l)).cloned().collect();
        let (a, b) = (mean_abs_rb(&m1, &shared), mean_abs_rb(&star, &shared));
        wins += usize::from(b <= a);
        notes.push(format!("seed {seed} mean|rb| m1={a:.2}% m1-star={b:.2}%"));
    }
    ok &= wins >= COMPARISON_WINS;
    notes.push(format!("m1-star wins {wins}/{}", COMPARISON_SEEDS.len()));
    judge(ok, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let design = SimulationDesign::scenario_i(SAMPLE_SIZE);
    let nu = tune_censoring_bound(&design, 0.3, BAYES_SEED).expect("censoring bound");
    let data = generate_dataset(&design, nu, BAYES_SEED, 0).expect("dataset");
    let config = SamplerConfig::new(Variant::M1, BAYES_SEED);
    let default = match sample_posterior(&PriorSpec::default(), &data, &config) {
        Ok(s) => s,
        Err(e) => return judge(false, e.to_string()),
    };
    // near-flat on the regression blocks; the log-baseline block keeps its
    // proper prior since a flat one is improper as a coefficient goes to zero
    let flat = NormalPrior { mean: 0.0, sd: FLAT_SD };
    let prior = PriorSpec { psi: flat, phi: flat, beta: flat, ..PriorSpec::default() };
    let near_flat = match sample_posterior(&prior, &data, &config) {
        Ok(s) => s,
        Err(e) => return judge(false, e.to_string()),
    };
    let fit = match fit_ml(&data, &FitConfig::new(Variant::M1)) {
        Ok(f) => f,
        Err(e) => return judge(false, e.to_string()),
    };
    let truth = [design.psi[0], design.phi[0]];
    let (means, sds) = (default.means(), default.sds());
    let flat_means = near_flat.means();
    let mut ok = true;
    let mut notes = Vec::new();
    for j in 0..2 {
        let z = (means[j] - truth[j]).abs() / sds[j];
        let gap = (flat_means[j] - fit.estimates()[j]).abs();
        ok &= z <= MAX_SDS_FROM_TRUTH && gap <= MAX_MEAN_VS_MLE;
        notes.push(format!(
            "{} mean={:.3} sd={:.3} |z|={z:.2} flat-vs-mle={gap:.4}",
            default.labels()[j],
            means[j],
            sds[j]
        ));
    }
    let max_rhat = default.max_rhat().max(near_flat.max_rhat());
    ok &= max_rhat <= MAX_RHAT;
    notes.push(format!("max rhat={max_rhat:.4}"));
    judge(ok, notes.join(", "))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn params(kind: BaselineKind, psi: f64, phi: f64) -> YpParameters {
    let basis = BpBasis::new(8, 12.0).unwrap();
    let gamma = vec![0.05, 0.2, 0.01, 0.4, 0.3, 0.8, 0.05, 1.1];
    let coefficients = BaselineCoefficients::new(kind, gamma).unwrap();
    YpParameters::new(vec![psi], vec![phi], Vec::new(), Baseline::new(basis, coefficients).unwrap()).unwrap()
}

fn times() -> impl Iterator<Item = f64> {
    (1..=60).map(|i| 0.25 * i as f64)
}

/// Baseline odds `R0` rebuilt from the basis cumulative.
fn baseline_odds(p: &YpParameters, t: f64) -> f64 {
    let b = p.baseline();
    let tail = b.basis().tail_cumulative(b.coefficients(), t).unwrap();
    match b.kind() {
        BaselineKind::Hazard => tail.exp_m1(),
        BaselineKind::Odds => tail,
    }
}

fn reductions() -> f64 {
    let mut worst: f64 = 0.0;
    for kind in [BaselineKind::Hazard, BaselineKind::Odds] {
        for (effect, z) in [(0.7, 1.0), (-0.4, 2.0)] {
            let ph = params(kind, effect, effect);
            let po = params(kind, effect, 0.0);
            let row = CovariateRow::z_only(vec![z]);
            let ratio = (z * effect).exp();
            for t in times().filter(|&t| t <= 12.0) {
                let odds = baseline_odds(&ph, t);
                let baseline_survival = 1.0 / (1.0 + odds);
                worst = worst.max(relative_gap(ph.survival(&row, t).unwrap(), baseline_survival.powf(ratio)));
                worst = worst.max(relative_gap(po.survival(&row, t).unwrap(), 1.0 / (1.0 + ratio * odds)));
            }
        }
    }
    worst
}

fn partition() -> f64 {
    let mut worst: f64 = 0.0;
    for m in [1, 5, 17, 40] {
        let tau = 3.5;
        let basis = BpBasis::new(m, tau).unwrap();
        for i in 0..=50 {
            let t = tau * i as f64 / 50.0;
            let dens: f64 = (1..=m).map(|k| basis.density(k, t).unwrap()).sum();
            let cdf: f64 = (1..=m).map(|k| basis.cdf(k, t).unwrap()).sum();
            worst = worst.max((dens * tau / m as f64 - 1.0).abs());
            worst = worst.max((cdf - m as f64 * t / tau).abs() / m as f64);
        }
    }
    worst
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let mut total = f(a) + f(b);
    for i in 1..intervals {
        total += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    total * h / 3.0
}

fn quadrature() -> f64 {
    let mut worst: f64 = 0.0;
    for kind in [BaselineKind::Hazard, BaselineKind::Odds] {
        let p = params(kind, 1.2, -0.6);
        let row = CovariateRow::z_only(vec![1.0]);
        for t in [0.5, 3.0, 7.5, 12.0] {
            let integral = simpson(|s| p.hazard(&row, s).unwrap(), 0.0, t, 20_000);
            worst = worst.max(relative_gap(integral, -p.log_survival(&row, t).unwrap()));
        }
        if kind == BaselineKind::Hazard {
            let b = p.baseline();
            for t in [0.5, 3.0, 7.5, 12.0] {
                let integral = simpson(|s| b.basis().hazard(b.coefficients(), s).unwrap(), 0.0, t, 20_000);
                worst = worst.max(relative_gap(integral, b.basis().cumulative(b.coefficients(), t).unwrap()));
            }
        }
    }
    worst
}

fn hazard_difference() -> f64 {
    let mut worst: f64 = 0.0;
    for kind in [BaselineKind::Hazard, BaselineKind::Odds] {
        let p = params(kind, 1.2, -0.6);
        for z in [0.0, 1.0] {
            let row = CovariateRow::z_only(vec![z]);
            for t in times().filter(|&t| t < 12.0) {
                let h = 1e-5 * t;
                let fd = -(p.log_survival(&row, t + h).unwrap() - p.log_survival(&row, t - h).unwrap()) / (2.0 * h);
                worst = worst.max(relative_gap(p.hazard(&row, t).unwrap(), fd));
            }
        }
    }
    worst
}

fn inverse_transform() -> f64 {
    let mut worst: f64 = 0.0;
    for design in [SimulationDesign::scenario_i(1), SimulationDesign::scenario_ii(1)] {
        let rows = [
            CovariateRow::new(vec![0.0; design.q()], vec![0.0; design.p()]),
            CovariateRow::new(vec![1.0; design.q()], vec![1.0; design.p()]),
            CovariateRow::new(vec![-0.8; design.q()], vec![1.3; design.p()]),
        ];
        for row in &rows {
            for i in 1..100 {
                let u = i as f64 / 100.0;
                let t = draw_failure_time(&design, row, u).unwrap();
                worst = worst.max((design.survival(row, t).unwrap() - u).abs());
            }
        }
    }
    worst
}

fn gradient() -> f64 {
    let mut worst: f64 = 0.0;
    for (design, variant) in [
        (SimulationDesign::scenario_i(300), Variant::M1),
        (SimulationDesign::scenario_i(300), Variant::M2),
        (SimulationDesign::scenario_ii(300), Variant::M1Star),
        (SimulationDesign::scenario_ii(300), Variant::M2Star),
    ] {
        let nu = tune_censoring_bound(&design, 0.3, 3).unwrap();
        let data = generate_dataset(&design, nu, 3, 0).unwrap();
        let basis = BpBasis::new(6, data.tau_hat()).unwrap();
        let lik = Likelihood::new(&data, variant, basis).unwrap();
        let theta: Vec<f64> = (0..lik.layout().dim()).map(|j| 0.3 * ((j as f64 * 1.7).sin()) - 0.5).collect();
        let mut grad = vec![0.0; theta.len()];
        lik.value_and_gradient(&theta, &mut grad);
        for j in 0..theta.len() {
            let h = 1e-5 * theta[j].abs().max(1.0);
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (lik.value(&up) - lik.value(&down)) / (2.0 * h);
            worst = worst.max((grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1.0));
        }
    }
    worst
}

fn criterion_5() -> Outcome {
    let checks = [
        ("ph/po", reductions(), REDUCTION_TOL),
        ("partition", partition(), PARTITION_TOL),
        ("quadrature", quadrature(), QUADRATURE_TOL),
        ("hazard-fd", hazard_difference(), HAZARD_FD_TOL),
        ("inverse", inverse_transform(), INVERSE_TOL),
        ("gradient-fd", gradient(), GRADIENT_FD_TOL),
    ];
    let ok = checks.iter().all(|(_, worst, tol)| worst <= tol);
    judge(
        ok,
        checks.iter().map(|(name, worst, tol)| format!("{name} {worst:.1e}<={tol:.0e}")).collect::<Vec<_>>().join(", "),
    )
}

fn criterion_6() -> Outcome {
    let Some(path) = std::env::var_os("YPBP_IPASS_DATA") else {
        return Outcome { verdict: Verdict::Skip, detail: "YPBP_IPASS_DATA not set".into() };
    };
    let data = match parse_dataset(Path::new(&path)) {
        Ok(d) => d,
        Err(e) => return judge(false, e.to_string()),
    };
    if data.q() != 1 || data.p() != 0 {
        return judge(false, format!("expected one z_ column and no x_ columns, got {} and {}", data.q(), data.p()));
    }
    let fit = match fit_ml(&data, &FitConfig::new(Variant::M1)) {
        Ok(f) => f,
        Err(e) => return judge(false, e.to_string()),
    };
    let (psi, phi) = (fit.psi()[0], fit.phi()[0]);
    let t_star = fit
        .params()
        .and_then(|p| {
            let query =
                CrossingQuery::for_data(&data, CovariateRow::z_only(vec![0.0]), CovariateRow::z_only(vec![1.0]))?;
            crossing_time(&p, &query)
        })
        .ok()
        .flatten()
        .map_or(f64::NAN, |r| r.time);
    let ok = within(psi, IPASS_PSI) && within(phi, IPASS_PHI) && within(t_star, IPASS_CROSSING);
    judge(ok, format!("n={} events={} psi={psi:.3} phi={phi:.3} t*={t_star:.3}", data.n(), data.event_count()))
}

fn run_cli(args: &[String], threads: &str) -> Result<Vec<u8>, String> {
    let out = Process::new(BIN).args(args).env("YPBP_THREADS", threads).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stdout).into_owned());
    }
    Ok(out.stdout)
}

fn criterion_7() -> Outcome {
    let dir = TempDir::new().expect("temp dir");
    let design = SimulationDesign::scenario_i(150);
    let nu = tune_censoring_bound(&design, 0.3, 5).unwrap();
    let path = dir.path().join("two_sample.csv");
    save_dataset(&generate_dataset(&design, nu, 5, 0).unwrap(), &path).unwrap();
    let data = path.to_str().unwrap();
    let bayes = "--inference bayes --chains 2 --iterations 300 --warmup 150";
    let commands = [
        format!("fit --data {data} --seed 1"),
        format!("fit --data {data} --variant m2 --seed 1 {bayes}"),
        format!("crossing --data {data} --profile-a 0 --profile-b 1 --seed 2 --bootstrap 100 --grid"),
        format!("crossing --data {data} --profile-a 0 --profile-b 1 --seed 2 {bayes}"),
        format!("curves --data {data} --profile 0 --profile 1 --seed 3"),
        format!("curves --data {data} --profile 0 --profile 1 --seed 3 {bayes}"),
        "simulate --scenario scenario-i --n 100 --replicates 6 --seed 4 --bootstrap 30".to_string(),
        "simulate --scenario scenario-ii --n 150 --replicates 6 --seed 4 --variant m1-star".to_string(),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for command in &commands {
        let args: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        let runs: Vec<_> = [THREADS[0], THREADS[0], THREADS[1]].iter().map(|t| run_cli(&args, t)).collect();
        let same = match (&runs[0], &runs[1], &runs[2]) {
            (Ok(a), Ok(b), Ok(c)) => a == b && a == c,
            _ => false,
        };
        ok &= same;
        if !same {
            notes.push(format!("differs or fails: {}", args[..2].join(" ")));
        }
    }
    notes.insert(0, format!("{} commands x (2 runs at {} thread, 1 at {})", commands.len(), THREADS[0], THREADS[1]));
    judge(ok, notes.join(", "))
}

fn report(id: &str, name: &str, started: Instant, outcome: Outcome) -> bool {
    let tag = match outcome.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("[{tag}] {id} {name} ({:.1}s): {}", started.elapsed().as_secs_f64(), outcome.detail);
    !matches!(outcome.verdict, Verdict::Fail)
}

fn main() -> ExitCode {
    // optional criterion ids select a subset; other arguments from the test
    // runner are ignored
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| a.chars().all(|c| c.is_ascii_digit())).collect();
    let wanted = |id: &str| selected.is_empty() || selected.iter().any(|s| s == id);
    let mut ok = true;

    if wanted("5") {
        let started = Instant::now();
        ok &= report("5", "analytic invariants", started, criterion_5());
    }
    if wanted("1") || wanted("2") {
        let started = Instant::now();
        let study = scenario_i_study();
        ok &= report("1", "scenario I coefficients", started, criterion_1(&study));
        ok &= report("2", "scenario I crossing time", started, criterion_2(&study));
    }
    let rest: [(&str, &str, Check); 4] = [
        ("3", "scenario II m1 and m1-star", criterion_3),
        ("4", "bayesian fit", criterion_4),
        ("6", "ipass data", criterion_6),
        ("7", "determinism", criterion_7),
    ];
    for (id, name, run) in rest {
        if wanted(id) {
            let started = Instant::now();
            ok &= report(id, name, started, run());
        }
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
