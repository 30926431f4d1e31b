use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ypbp::simulation::Censoring;
use ypbp::Variant;
use ypbp_cli::config::{parse_values, StudySettings};
use ypbp_cli::{execute_with, Command, Extras, Inference, Report, RunConfig};

#[derive(Parser)]
#[command(name = "ypbp", version, about = "Yang-Prentice survival models with Bernstein polynomial baselines")]
struct Cli {
    /// Worker threads for bootstrap, chains and simulation replicates.
    #[arg(long, global = true, env = "YPBP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit a model and report coefficients and hazard ratios.
    Fit(FitArgs),
    /// Estimate the time at which two profiles' survival curves cross.
    Crossing(CrossingArgs),
    /// Run a Monte Carlo study on a named scenario.
    Simulate(SimulateArgs),
    /// Tabulate fitted survival curves for covariate profiles.
    Curves(CurvesArgs),
    /// Re-run the configuration embedded in a report.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    M1,
    M2,
    #[value(name = "m1-star")]
    M1Star,
    #[value(name = "m2-star")]
    M2Star,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::M1 => Variant::M1,
            VariantArg::M2 => Variant::M2,
            VariantArg::M1Star => Variant::M1Star,
            VariantArg::M2Star => Variant::M2Star,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InferenceArg {
    Ml,
    Bayes,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value = "m1")]
    variant: VariantArg,
    /// Bernstein degree, or `auto` to choose from the sample size.
    #[arg(long, default_value = "auto", value_parser = parse_degree)]
    degree: Degree,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Dataset: `time`, `status`, `z_*` and optional `x_*` columns.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ml")]
    inference: InferenceArg,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    /// Iterations per chain including warmup.
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    /// Prior standard deviation for every parameter block.
    #[arg(long, default_value_t = 4.0)]
    prior_sd: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct CrossingArgs {
    /// Covariate values, `z` then `x` in file column order, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    profile_a: String,
    #[arg(long, allow_hyphen_values = true)]
    profile_b: String,
    /// Bootstrap replicates under maximum likelihood.
    #[arg(long, default_value_t = 4000)]
    bootstrap: usize,
    /// Attach both survival curves on a grid over the follow-up range.
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct CurvesArgs {
    /// Covariate values for one curve; repeat for more curves.
    #[arg(long = "profile", required = true, allow_hyphen_values = true)]
    profiles: Vec<String>,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// `scenario-i` or `scenario-ii`.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    /// Target censored fraction used to tune the censoring bound.
    #[arg(long, default_value_t = 0.3, conflicts_with = "nu")]
    censoring_rate: f64,
    /// Fixed upper bound of the uniform censoring distribution.
    #[arg(long)]
    nu: Option<f64>,
    /// Bootstrap replicates per dataset for the crossing time (two-sample
    /// scenarios only).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Also write every simulated dataset to this directory.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy)]
struct Degree(Option<usize>);

fn parse_degree(s: &str) -> Result<Degree, String> {
    if s == "auto" {
        return Ok(Degree(None));
    }
    s.parse().map(|d| Degree(Some(d))).map_err(|_| format!("'{s}' is neither a positive integer nor auto"))
}

fn apply_common(c: &mut RunConfig, common: &Common) {
    c.variant = common.variant.into();
    c.degree = common.degree.0;
    c.level = common.level;
    c.seed = common.seed;
}

fn apply_model(c: &mut RunConfig, m: &ModelArgs) {
    apply_common(c, &m.common);
    c.data = Some(m.data.clone());
    c.inference = match m.inference {
        InferenceArg::Ml => Inference::Ml,
        InferenceArg::Bayes => Inference::Bayes,
    };
    c.bayes.chains = m.chains;
    c.bayes.iterations = m.iterations;
    c.bayes.warmup = m.warmup;
    c.bayes.prior_sd = m.prior_sd;
}

fn resolve(sub: Sub) -> Result<(RunConfig, Option<PathBuf>, Extras), String> {
    let parse_profile = |s: &str| parse_values(s).map_err(|e| e.to_string());
    Ok(match sub {
        Sub::Fit(a) => {
            let mut c = RunConfig::new(Command::Fit);
            apply_model(&mut c, &a.model);
            (c, a.model.common.out, Extras::default())
        }
        Sub::Crossing(a) => {
            let mut c = RunConfig::new(Command::Crossing);
            apply_model(&mut c, &a.model);
            c.profiles = vec![parse_profile(&a.profile_a)?, parse_profile(&a.profile_b)?];
            c.bootstrap = a.bootstrap;
            c.grid = a.grid;
            c.grid_points = a.grid_points;
            (c, a.model.common.out, Extras::default())
        }
        Sub::Curves(a) => {
            let mut c = RunConfig::new(Command::Curves);
            apply_model(&mut c, &a.model);
            c.profiles = a.profiles.iter().map(|p| parse_profile(p)).collect::<Result<_, _>>()?;
            c.grid_points = a.grid_points;
            (c, a.model.common.out, Extras::default())
        }
        Sub::Simulate(a) => {
            let mut c = RunConfig::new(Command::Simulate);
            apply_common(&mut c, &a.common);
            c.study = Some(StudySettings {
                scenario: a.scenario,
                n: a.n,
                replicates: a.replicates,
                censoring: a.nu.map_or(Censoring::Target(a.censoring_rate), Censoring::Bound),
                bootstrap: a.bootstrap.filter(|&b| b > 0),
            });
            (c, a.common.out, Extras { dump_dir: a.dump_dir })
        }
        Sub::Replay(a) => {
            let text = std::fs::read_to_string(&a.report).map_err(|e| format!("{}: {e}", a.report.display()))?;
            let source = a.report.display().to_string();
            let report = Report::parse(&text, &source).map_err(|e| e.to_string())?;
            let section = report.section("config").ok_or_else(|| format!("{source}: no [config] section"))?;
            let c = RunConfig::from_section(section).map_err(|e| format!("{source}: {e}"))?;
            (c, a.out, Extras::default())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("ypbp: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let (config, out, extras) = match resolve(cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("ypbp: {e}");
            return ExitCode::from(2);
        }
    };
    let report = execute_with(&config, &extras);
    let text = report.to_string();
    let written = match &out {
        Some(path) => std::fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display())),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("ypbp: {e}");
        return ExitCode::from(2);
    }
    if let Some(e) = report.section("error").and_then(|s| s.get("message")) {
        eprintln!("ypbp: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
