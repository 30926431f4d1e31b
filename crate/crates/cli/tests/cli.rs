use std::path::{Path, PathBuf};
use std::process::Command as Process;

use tempfile::TempDir;
use ypbp::simulation::{generate_dataset, tune_censoring_bound, Censoring, SimulationDesign};
use ypbp::{SurvivalDataset, Variant};
use ypbp_cli::config::StudySettings;
use ypbp_cli::dataset_file::{parse_dataset, save_dataset};
use ypbp_cli::report::parse_num;
use ypbp_cli::{execute, execute_with, Command, Extras, Inference, Report, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_ypbp");

fn write_design(dir: &Path, name: &str, design: &SimulationDesign, seed: u64) -> PathBuf {
    let nu = tune_censoring_bound(design, 0.3, seed).unwrap();
    let data = generate_dataset(design, nu, seed, 0).unwrap();
    let path = dir.join(name);
    save_dataset(&data, &path).unwrap();
    path
}

fn two_sample(dir: &Path, n: usize, seed: u64) -> PathBuf {
    write_design(dir, "two_sample.csv", &SimulationDesign::scenario_i(n), seed)
}

fn config(command: Command, data: &Path) -> RunConfig {
    let mut c = RunConfig::new(command);
    c.data = Some(data.to_path_buf());
    c
}

fn number(report: &Report, section: &str, key: &str) -> f64 {
    parse_num(report.section(section).unwrap().get(key).unwrap()).unwrap()
}

fn cell(report: &Report, section: &str, row: &str, column: &str) -> f64 {
    let table = report.section(section).unwrap().table.as_ref().unwrap();
    let j = table.column(column).unwrap();
    parse_num(&table.row(row).unwrap()[j]).unwrap()
}

fn column(report: &Report, section: &str, column: &str) -> Vec<f64> {
    let table = report.section(section).unwrap().table.as_ref().unwrap();
    let j = table.column(column).unwrap();
    table.rows.iter().map(|r| parse_num(&r[j]).unwrap()).collect()
}

#[test]
fn parses_small_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "time,status,z_trt\n1,1,0\n2,0,1\n3,1,1\n").unwrap();
    let data = parse_dataset(&path).unwrap();
    assert_eq!((data.n(), data.q(), data.p(), data.tau_hat()), (3, 1, 0, 3.0));
}

#[test]
fn bad_status_is_reported_with_its_row() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "time,status,z_trt\n1,1,0\n2,2,1\n").unwrap();
    let report = execute(&config(Command::Fit, &path));
    assert!(report.has_error());
    let message = report.section("error").unwrap().get("message").unwrap();
    assert!(message.contains("bad.csv:3:status"), "{message}");
}

#[test]
fn proportional_hazards_data_gives_overlapping_intervals() {
    let dir = TempDir::new().unwrap();
    let mut design = SimulationDesign::scenario_i(400);
    design.psi = vec![0.7];
    design.phi = vec![0.7];
    let path = write_design(dir.path(), "ph.csv", &design, 21);
    let report = execute(&config(Command::Fit, &path));
    assert!(!report.has_error(), "{report}");
    let (psi, phi) = ("psi[z]", "phi[z]");
    let lower = cell(&report, "coefficients", psi, "lower").max(cell(&report, "coefficients", phi, "lower"));
    let upper = cell(&report, "coefficients", psi, "upper").min(cell(&report, "coefficients", phi, "upper"));
    assert!(lower <= upper, "intervals do not overlap");
    let hr = cell(&report, "hazard_ratios", "z", "short");
    assert!((hr - cell(&report, "coefficients", psi, "estimate").exp()).abs() < 1e-12 * hr);
}

fn schema(report: &Report) -> Vec<(String, Vec<String>, Vec<String>)> {
    report
        .sections
        .iter()
        .filter(|s| s.name != "config" && s.name != "provenance")
        .map(|s| {
            let keys = s.entries.iter().map(|(k, _)| k.clone()).collect();
            let columns = s.table.as_ref().map_or(Vec::new(), |t| t.columns.clone());
            (s.name.clone(), keys, columns)
        })
        .collect()
}

#[test]
fn hazard_and_odds_baselines_share_a_schema() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 200, 4);
    let m1 = execute(&config(Command::Fit, &path));
    let mut c = config(Command::Fit, &path);
    c.variant = Variant::M2;
    let m2 = execute(&c);
    assert!(!m1.has_error() && !m2.has_error());
    assert_eq!(schema(&m1), schema(&m2));
    assert_eq!(m1.section("model").unwrap().get("baseline"), Some("hazard"));
    assert_eq!(m2.section("model").unwrap().get("baseline"), Some("odds"));
}

#[test]
fn bayesian_fit_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 120, 6);
    let mut c = config(Command::Fit, &path);
    c.inference = Inference::Bayes;
    c.seed = Some(17);
    c.bayes.chains = 2;
    c.bayes.iterations = 300;
    c.bayes.warmup = 150;
    let first = execute(&c).to_string();
    assert!(!first.contains("[error]"), "{first}");
    assert_eq!(first, execute(&c).to_string());
    assert!(first.contains("interval = hpd"));
}

#[test]
fn identical_profiles_are_a_degenerate_query() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 200, 4);
    let mut c = config(Command::Crossing, &path);
    c.seed = Some(1);
    c.bootstrap = 20;
    c.profiles = vec![vec![1.0], vec![1.0]];
    let report = execute(&c);
    assert_eq!(report.section("error").unwrap().get("kind"), Some("degenerate-query"));
}

/// Beta(k, m-k+1) CDF as the binomial upper tail `P(Bin(m, x) >= k)`.
fn beta_cdf(k: usize, m: usize, x: f64) -> f64 {
    let mut choose = 1.0;
    let mut total = 0.0;
    for j in 0..=m {
        if j > 0 {
            choose *= (m - j + 1) as f64 / j as f64;
        }
        if j >= k {
            total += choose * x.powi(j as i32) * (1.0 - x).powi((m - j) as i32);
        }
    }
    total
}

/// Survival under a hazard-baseline fit rebuilt from the report's numbers.
fn report_survival(report: &Report, z: f64, t: f64) -> f64 {
    let tau = number(report, "model", "tau");
    let gamma = column(report, "baseline", "estimate");
    let m = gamma.len();
    let x = (t / tau).min(1.0);
    let cumulative: f64 = gamma.iter().enumerate().map(|(i, g)| g * beta_cdf(i + 1, m, x)).sum();
    let short = (z * cell(report, "coefficients", "psi[z]", "estimate")).exp();
    let long = (z * cell(report, "coefficients", "phi[z]", "estimate")).exp();
    (1.0 + short / long * cumulative.exp_m1()).powf(-long)
}

#[test]
fn crossing_matches_a_bisection_oracle() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 300, 8);
    let fit = execute(&config(Command::Fit, &path));
    let mut c = config(Command::Crossing, &path);
    c.seed = Some(2);
    c.bootstrap = 50;
    c.profiles = vec![vec![0.0], vec![1.0]];
    let report = execute(&c);
    assert!(!report.has_error(), "{report}");
    let reported = number(&report, "crossing", "t_star");

    let diff = |t: f64| report_survival(&fit, 0.0, t) - report_survival(&fit, 1.0, t);
    let (mut lo, mut hi) = (number(&report, "crossing", "t_min"), number(&report, "crossing", "t_max"));
    assert!(diff(lo) * diff(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diff(mid).signum() == diff(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((reported - lo).abs() < 1e-6 * lo, "reported {reported}, oracle {lo}");
}

#[test]
fn crossing_grid_is_a_pair_of_survival_curves() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 200, 4);
    let mut c = config(Command::Crossing, &path);
    c.seed = Some(1);
    c.bootstrap = 20;
    c.grid = true;
    c.profiles = vec![vec![0.0], vec![1.0]];
    let report = execute(&c);
    let t = column(&report, "curve", "t");
    assert_eq!(t.len(), 512);
    assert!(t[0] > 0.0 && (t[511] - number(&report, "model", "tau")).abs() < 1e-12);
    for name in ["survival_a", "survival_b"] {
        let s = column(&report, "curve", name);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
    }
}

fn study(seed: u64, replicates: usize, bootstrap: Option<usize>) -> RunConfig {
    let mut c = RunConfig::new(Command::Simulate);
    c.seed = Some(seed);
    c.study = Some(StudySettings {
        scenario: "scenario-i".into(),
        n: 50,
        replicates,
        censoring: Censoring::Target(0.3),
        bootstrap,
    });
    c
}

#[test]
fn small_study_is_deterministic() {
    let c = study(13, 2, None);
    let first = execute(&c).to_string();
    assert!(!first.contains("[error]"), "{first}");
    assert_eq!(first, execute(&c).to_string());
}

#[test]
fn relative_bias_recomputes_from_replicates() {
    let report = execute(&study(5, 6, Some(30)));
    let table = report.section("replicates").unwrap().table.as_ref().unwrap();
    let status = table.column("status").unwrap();
    for label in ["psi[z]", "phi[z]", "t_star"] {
        let j = table.column(label).unwrap();
        let values: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r[status] == "ok")
            .map(|r| parse_num(&r[j]).unwrap())
            .filter(|v| v.is_finite())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let truth = cell(&report, "metrics", label, "truth");
        let rb = 100.0 * (mean - truth) / truth.abs();
        let reported = cell(&report, "metrics", label, "rb");
        assert!((rb - reported).abs() <= 1e-12 * reported.abs().max(1.0), "{label}: {rb} vs {reported}");
    }
    for cov in column(&report, "metrics", "cov") {
        assert!((0.0..=1.0).contains(&cov));
    }
}

#[test]
fn dumped_datasets_reproduce_replicate_estimates() {
    let dir = TempDir::new().unwrap();
    let c = study(9, 2, None);
    let report = execute_with(&c, &Extras { dump_dir: Some(dir.path().to_path_buf()) });
    let estimates = column(&report, "replicates", "psi[z]");
    for (r, est) in estimates.iter().enumerate() {
        let path = dir.path().join(format!("replicate_{r:05}.csv"));
        let data: SurvivalDataset = parse_dataset(&path).unwrap();
        assert_eq!(data.n(), 50);
        let fit = execute(&config(Command::Fit, &path));
        assert_eq!(cell(&fit, "coefficients", "psi[z]", "estimate"), *est);
    }
}

fn run(args: &[&str], threads: &str) -> (bool, String) {
    let out = Process::new(BIN).args(args).env("YPBP_THREADS", threads).output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn exit_status_follows_the_error_block() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 100, 3);
    let data = path.to_str().unwrap();
    let (ok, text) = run(&["fit", "--data", data], "1");
    assert!(ok && !text.contains("[error]"));
    let (ok, text) = run(&["crossing", "--data", data, "--profile-a", "1", "--profile-b", "1", "--seed", "1"], "1");
    assert!(!ok && text.contains("[error]"));
    let (ok, text) = run(&["fit", "--data", "/nonexistent/file.csv"], "1");
    assert!(!ok && text.contains("[error]"));
}

#[test]
fn replay_reproduces_the_report() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 150, 3);
    let first = dir.path().join("first.txt");
    let second = dir.path().join("second.txt");
    let args = [
        "crossing",
        "--data",
        path.to_str().unwrap(),
        "--profile-a",
        "0",
        "--profile-b",
        "1",
        "--seed",
        "4",
        "--bootstrap",
        "40",
        "--grid",
        "--grid-points",
        "16",
        "--out",
        first.to_str().unwrap(),
    ];
    assert!(run(&args, "1").0);
    assert!(run(&["replay", "--report", first.to_str().unwrap(), "--out", second.to_str().unwrap()], "1").0);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    std::fs::write(&path, "time,status,z_z\n1,1,0\n2,1,1\n").unwrap();
    let (ok, text) = run(&["replay", "--report", first.to_str().unwrap()], "1");
    assert!(!ok && text.contains("sha256"), "{text}");
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = TempDir::new().unwrap();
    let path = two_sample(dir.path(), 150, 3);
    let data = path.to_str().unwrap();
    let crossing =
        ["crossing", "--data", data, "--profile-a", "0", "--profile-b", "1", "--seed", "4", "--bootstrap", "40"];
    let simulate = ["simulate", "--scenario", "scenario-ii", "--n", "80", "--replicates", "4", "--seed", "2"];
    for args in [&crossing[..], &simulate[..]] {
        let one = run(args, "1");
        let four = run(args, "4");
        assert!(one.0, "{}", one.1);
        assert_eq!(one, four);
    }
}
