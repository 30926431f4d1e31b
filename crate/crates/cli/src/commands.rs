//! Command runners. Each produces a complete report; failures become an
//! `[error]` section so the exit status follows the report.

use std::path::{Path, PathBuf};

use ypbp::bayes::RHAT_THRESHOLD;
use ypbp::crossing::{posterior_survival_bands, CrossingEstimate};
use ypbp::simulation::{generate_dataset, run_mc_study, McMetrics, McStudyConfig, McStudyResult, SimulationDesign};
use ypbp::{
    bootstrap_crossing, crossing_time, fit_ml, hpd_interval, posterior_crossing, sample_posterior, survival_curve_grid,
    BootstrapConfig, CovariateRow, CrossingQuery, FitConfig, FitResult, FitStatus, PosteriorSample, PriorSpec,
    SamplerConfig, SurvivalDataset, Variant,
};

use crate::config::{file_sha256, values, Command, Inference, RunConfig};
use crate::dataset_file::{parse_dataset, save_dataset};
use crate::error::{CliError, Result};
use crate::report::{list, num, opt_num, Report, Section, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Side outputs that do not change the report.
#[derive(Debug, Clone, Default)]
pub struct Extras {
    /// Write every simulated replicate dataset here.
    pub dump_dir: Option<PathBuf>,
}

pub fn execute(config: &RunConfig) -> Report {
    execute_with(config, &Extras::default())
}

pub fn execute_with(config: &RunConfig, extras: &Extras) -> Report {
    let mut config = config.clone();
    let mut body = Vec::new();
    let outcome = config.validate().and_then(|()| run(&mut config, extras, &mut body));
    let mut report = Report::default();
    report.push(Section::new("report").entry("command", config.command.as_str()).entry("version", VERSION));
    report.push(config.to_section());
    report.push(
        Section::new("provenance")
            .entry("config_sha256", config.hash())
            .entry("seed", config.seed.map_or(String::new(), |s| s.to_string()))
            .entry("version", VERSION),
    );
    report.sections.extend(body);
    if let Err(e) = outcome {
        report.push(error_section(&e));
    }
    report
}

fn error_section(e: &CliError) -> Section {
    let kind = match e {
        CliError::Parse { .. } => "parse",
        CliError::Io { .. } => "io",
        CliError::Config(_) => "config",
        CliError::Model(ypbp::Error::DegenerateQuery(_)) => "degenerate-query",
        CliError::Model(_) => "model",
    };
    Section::new("error").entry("kind", kind).entry("message", e.to_string())
}

fn run(config: &mut RunConfig, extras: &Extras, out: &mut Vec<Section>) -> Result<()> {
    match config.command {
        Command::Simulate => simulate(config, extras, out),
        command => {
            let data = load_data(config)?;
            out.push(model_section(&data, config));
            match command {
                Command::Fit => fit(&data, config, out),
                Command::Crossing => crossing(&data, config, out),
                Command::Curves => curves(&data, config, out),
                Command::Simulate => unreachable!(),
            }
        }
    }
}

fn load_data(config: &mut RunConfig) -> Result<SurvivalDataset> {
    let path = config.data.clone().expect("validated");
    let hash = file_sha256(&path)?;
    if let Some(expected) = &config.data_sha256 {
        if expected != &hash {
            return Err(CliError::config(format!(
                "{} has changed since the report was produced (sha256 {hash}, expected {expected})",
                path.display()
            )));
        }
    }
    config.data_sha256 = Some(hash);
    parse_dataset(&path)
}

fn fit_config(config: &RunConfig) -> FitConfig {
    let mut c = FitConfig::new(config.variant);
    c.degree = config.degree;
    c
}

fn sampler_config(config: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        degree: config.degree,
        chains: config.bayes.chains,
        iterations: config.bayes.iterations,
        warmup: config.bayes.warmup,
        ..SamplerConfig::new(config.variant, config.seed.expect("validated"))
    }
}

fn sample(data: &SurvivalDataset, config: &RunConfig) -> Result<PosteriorSample> {
    Ok(sample_posterior(&PriorSpec::uniform_sd(config.bayes.prior_sd), data, &sampler_config(config))?)
}

fn model_section(data: &SurvivalDataset, config: &RunConfig) -> Section {
    Section::new("model")
        .entry("variant", config.variant.as_str())
        .entry("baseline", config.variant.baseline_kind().as_str())
        .entry("inference", config.inference.as_str())
        .entry("n", data.n().to_string())
        .entry("events", data.event_count().to_string())
        .entry("censored_fraction", num(data.censored_fraction()))
        .entry("tau", num(data.tau_hat()))
        .entry("z_covariates", list(data.z_names().iter().cloned()))
        .entry("x_covariates", list(data.x_names().iter().cloned()))
}

/// Profile values are `z` then `x` in file order; variants without a
/// constant-effect block see them all as `z`.
fn profile_row(values: &[f64], data: &SurvivalDataset, variant: Variant) -> Result<CovariateRow> {
    if values.len() != data.q() + data.p() {
        return Err(CliError::config(format!(
            "profile has {} values but the dataset has {} covariates",
            values.len(),
            data.q() + data.p()
        )));
    }
    Ok(if variant.has_constant_block() {
        CovariateRow::new(values[..data.q()].to_vec(), values[data.q()..].to_vec())
    } else {
        CovariateRow::z_only(values.to_vec())
    })
}

fn status_str(status: FitStatus) -> &'static str {
    match status {
        FitStatus::Converged => "converged",
        FitStatus::NotConverged => "not-converged",
        FitStatus::IllConditioned { .. } => "ill-conditioned",
    }
}

/// Covariate name inside a `block[name]` label.
fn covariate_of(label: &str) -> &str {
    label.split_once('[').and_then(|(_, r)| r.strip_suffix(']')).unwrap_or(label)
}

fn ml_sections(fit: &FitResult, level: f64) -> Result<Vec<Section>> {
    let layout = fit.layout();
    let k = layout.regression_len();
    let est = fit.estimates();
    let se = fit.standard_errors();
    let intervals = fit.wald_intervals(level).ok();
    let se_at = |j: usize| se.as_ref().map(|s| s[j]);
    let iv_at = |j: usize| intervals.as_ref().map(|v| v[j]);

    let mut coef = Table::new(["parameter", "estimate", "std_error", "lower", "upper"]);
    for (j, &value) in est.iter().enumerate().take(k) {
        coef.push(vec![
            fit.labels()[j].clone(),
            num(value),
            opt_num(se_at(j)),
            opt_num(iv_at(j).map(|i| i.lower)),
            opt_num(iv_at(j).map(|i| i.upper)),
        ]);
    }
    let mut base = Table::new(["parameter", "estimate", "std_error", "at_boundary"]);
    for j in layout.baseline() {
        base.push(vec![
            fit.labels()[j].clone(),
            num(est[j]),
            opt_num(se_at(j)),
            fit.boundary_coefficients().contains(&j).to_string(),
        ]);
    }
    let ratio = |j: usize| (est[j].exp(), iv_at(j).map(|i| (i.lower.exp(), i.upper.exp())));
    let ratios = hazard_ratio_table(fit.labels(), layout, ratio);
    let diagnostics = Section::new("diagnostics")
        .entry("status", status_str(fit.status()))
        .entry("converged", fit.converged().to_string())
        .entry("iterations", fit.iterations().to_string())
        .entry("loglik", num(fit.loglik()))
        .entry("gradient_norm", num(fit.gradient_norm()))
        .entry("condition_number", opt_num(fit.condition_number()))
        .entry("boundary_coefficients", fit.boundary_coefficients().len().to_string());
    Ok(vec![
        Section::new("coefficients").entry("interval", "wald").entry("level", num(level)).with_table(coef),
        Section::new("baseline").entry("degree", fit.basis().degree().to_string()).with_table(base),
        ratios,
        diagnostics,
    ])
}

/// Short- and long-term ratio per covariate; constant-effect covariates have
/// the same ratio at both ends.
fn hazard_ratio_table(
    labels: &[String],
    layout: &ypbp::ParameterLayout,
    ratio: impl Fn(usize) -> (f64, Option<(f64, f64)>),
) -> Section {
    let mut t = Table::new(["covariate", "short", "short_lower", "short_upper", "long", "long_lower", "long_upper"]);
    let mut row = |name: &str, s: (f64, Option<(f64, f64)>), l: (f64, Option<(f64, f64)>)| {
        t.push(vec![
            name.to_string(),
            num(s.0),
            opt_num(s.1.map(|b| b.0)),
            opt_num(s.1.map(|b| b.1)),
            num(l.0),
            opt_num(l.1.map(|b| b.0)),
            opt_num(l.1.map(|b| b.1)),
        ]);
    };
    for (i, j) in layout.psi().zip(layout.phi()) {
        row(covariate_of(&labels[i]), ratio(i), ratio(j));
    }
    for j in layout.beta() {
        row(covariate_of(&labels[j]), ratio(j), ratio(j));
    }
    Section::new("hazard_ratios").with_table(t)
}

fn bayes_sections(sample: &PosteriorSample, level: f64) -> Result<Vec<Section>> {
    let layout = sample.layout();
    let means = sample.means();
    let sds = sample.sds();
    let columns = ["parameter", "mean", "sd", "lower", "upper", "rhat", "ess"];
    let mut coef = Table::new(columns);
    let mut base = Table::new(columns);
    for j in 0..layout.dim() {
        let hpd = sample.hpd(j, level)?;
        let row = vec![
            sample.labels()[j].clone(),
            num(means[j]),
            num(sds[j]),
            num(hpd.lower),
            num(hpd.upper),
            num(sample.rhat()[j]),
            num(sample.ess()[j]),
        ];
        if layout.baseline().contains(&j) {
            base.push(row);
        } else {
            coef.push(row);
        }
    }
    let ratio = |j: usize| {
        let draws: Vec<f64> = sample.column(j).iter().map(|v| v.exp()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        (mean, hpd_interval(&draws, level).ok().map(|i| (i.lower, i.upper)))
    };
    let ratios = hazard_ratio_table(sample.labels(), layout, ratio);
    let min_ess = sample.ess().iter().cloned().fold(f64::INFINITY, f64::min);
    let diagnostics = Section::new("diagnostics")
        .entry("sampler", "nuts")
        .entry("chains", sample.acceptance().len().to_string())
        .entry("warmup", sample.warmup().to_string())
        .entry("draws", sample.draw_count().to_string())
        .entry("max_rhat", num(sample.max_rhat()))
        .entry("rhat_threshold", num(RHAT_THRESHOLD))
        .entry("converged", sample.converged().to_string())
        .entry("min_ess", num(min_ess))
        .entry("acceptance", list(sample.acceptance().iter().map(|&a| num(a))))
        .entry("divergences", list(sample.divergences().iter().map(|d| d.to_string())));
    Ok(vec![
        Section::new("coefficients").entry("interval", "hpd").entry("level", num(level)).with_table(coef),
        Section::new("baseline").entry("degree", sample.basis().degree().to_string()).with_table(base),
        ratios,
        diagnostics,
    ])
}

fn fit(data: &SurvivalDataset, config: &RunConfig, out: &mut Vec<Section>) -> Result<()> {
    match config.inference {
        Inference::Ml => out.extend(ml_sections(&fit_ml(data, &fit_config(config))?, config.level)?),
        Inference::Bayes => out.extend(bayes_sections(&sample(data, config)?, config.level)?),
    }
    Ok(())
}

/// `points` equally spaced times on `(0, tau]`.
fn time_grid(tau: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|i| if i == points { tau } else { tau * i as f64 / points as f64 }).collect()
}

fn crossing_section(est: &CrossingEstimate, query: &CrossingQuery, config: &RunConfig) -> Section {
    let mut s = Section::new("crossing")
        .entry("method", est.method.as_str())
        .entry("level", num(est.level))
        .entry("profile_a", values(&config.profiles[0]))
        .entry("profile_b", values(&config.profiles[1]))
        .entry("t_min", num(query.t_min))
        .entry("t_max", num(query.t_max))
        .entry("t_star", opt_num(est.t_star))
        .entry("lower", opt_num(est.interval.map(|i| i.lower)))
        .entry("upper", opt_num(est.interval.map(|i| i.upper)))
        .entry("replicates", est.replicates.to_string())
        .entry("no_root", est.no_root.to_string())
        .entry("no_root_fraction", num(est.no_root_fraction()))
        .entry("failed", est.failed.to_string())
        .entry("multiple_roots", est.multiple_roots.to_string())
        .entry("unreliable", est.unreliable.to_string());
    let note = if est.t_star.is_none() {
        "the fitted survival curves do not cross within the horizon"
    } else if est.unreliable {
        "more than half of the replicates have no crossing within the horizon"
    } else {
        ""
    };
    s.push("note", note);
    s
}

fn crossing(data: &SurvivalDataset, config: &RunConfig, out: &mut Vec<Section>) -> Result<()> {
    let a = profile_row(&config.profiles[0], data, config.variant)?;
    let b = profile_row(&config.profiles[1], data, config.variant)?;
    let query = CrossingQuery::for_data(data, a.clone(), b.clone())?;
    let grid = time_grid(data.tau_hat(), config.grid_points);
    let (est, curves) = match config.inference {
        Inference::Ml => {
            let fit = fit_ml(data, &fit_config(config))?;
            let params = fit.params()?;
            // fails early on identical curves before any resampling
            crossing_time(&params, &query)?;
            let boot = BootstrapConfig {
                replicates: config.bootstrap,
                level: config.level,
                seed: config.seed.expect("validated"),
                fit: fit_config(config),
            };
            let est = bootstrap_crossing(data, &query, &boot)?;
            out.extend(ml_sections(&fit, config.level)?);
            let curves = if config.grid { Some(survival_curve_grid(&params, &[a, b], &grid)?.survival) } else { None };
            (est, curves)
        }
        Inference::Bayes => {
            let sample = sample(data, config)?;
            let est = posterior_crossing(&sample, &query, config.level)?;
            out.extend(bayes_sections(&sample, config.level)?);
            let curves = if config.grid {
                Some(posterior_survival_bands(&sample, &[a, b], &grid, config.level)?.survival)
            } else {
                None
            };
            (est, curves)
        }
    };
    out.push(crossing_section(&est, &query, config));
    if let Some(curves) = curves {
        let mut t = Table::new(["t", "survival_a", "survival_b"]);
        for (i, &time) in grid.iter().enumerate() {
            t.push(vec![num(time), num(curves[0][i]), num(curves[1][i])]);
        }
        out.push(Section::new("curve").with_table(t));
    }
    Ok(())
}

fn curves(data: &SurvivalDataset, config: &RunConfig, out: &mut Vec<Section>) -> Result<()> {
    let rows = config.profiles.iter().map(|p| profile_row(p, data, config.variant)).collect::<Result<Vec<_>>>()?;
    let grid = time_grid(data.tau_hat(), config.grid_points);
    let mut section = Section::new("curves");
    for (i, p) in config.profiles.iter().enumerate() {
        section.push(&format!("profile_{}", i + 1), values(p));
    }
    let mut columns = vec!["t".to_string()];
    let table = match config.inference {
        Inference::Ml => {
            let fit = fit_ml(data, &fit_config(config))?;
            let curves = survival_curve_grid(&fit.params()?, &rows, &grid)?;
            columns.extend((1..=rows.len()).map(|i| format!("survival_{i}")));
            let mut t = Table::new(columns);
            for (g, &time) in grid.iter().enumerate() {
                let mut row = vec![num(time)];
                row.extend(curves.survival.iter().map(|c| num(c[g])));
                t.push(row);
            }
            t
        }
        Inference::Bayes => {
            let sample = sample(data, config)?;
            let curves = posterior_survival_bands(&sample, &rows, &grid, config.level)?;
            let bands = curves.bands.expect("posterior curves carry bands");
            section.push("level", num(config.level));
            for i in 1..=rows.len() {
                columns.extend([format!("survival_{i}"), format!("lower_{i}"), format!("upper_{i}")]);
            }
            let mut t = Table::new(columns);
            for (g, &time) in grid.iter().enumerate() {
                let mut row = vec![num(time)];
                for (c, b) in curves.survival.iter().zip(&bands) {
                    row.extend([num(c[g]), num(b[g].lower), num(b[g].upper)]);
                }
                t.push(row);
            }
            t
        }
    };
    out.push(section.with_table(table));
    Ok(())
}

fn metrics_row(t: &mut Table, m: &McMetrics) {
    t.push(vec![
        m.label.clone(),
        num(m.truth),
        num(m.est),
        num(m.se),
        num(m.sde),
        num(m.rb),
        num(m.coverage),
        m.count.to_string(),
    ]);
}

fn simulate(config: &RunConfig, extras: &Extras, out: &mut Vec<Section>) -> Result<()> {
    let study = config.study.as_ref().expect("validated");
    let design = SimulationDesign::by_name(&study.scenario, study.n)?;
    let seed = config.seed.expect("validated");
    let mc = McStudyConfig {
        variant: config.variant,
        degree: config.degree,
        replicates: study.replicates,
        seed,
        censoring: study.censoring,
        level: config.level,
        bootstrap: study.bootstrap,
    };
    let result = run_mc_study(&design, &mc)?;
    out.extend(study_sections(&design, &result));
    if let Some(dir) = &extras.dump_dir {
        dump_datasets(&design, result.nu, seed, study.replicates, dir)?;
    }
    Ok(())
}

fn study_sections(design: &SimulationDesign, result: &McStudyResult) -> Vec<Section> {
    let design_section = Section::new("design")
        .entry("n", design.n.to_string())
        .entry("z_covariates", list(design.z_names.iter().cloned()))
        .entry("x_covariates", list(design.x_names.iter().cloned()))
        .entry("psi", list(design.psi.iter().map(|&v| num(v))))
        .entry("phi", list(design.phi.iter().map(|&v| num(v))))
        .entry("beta", list(design.beta.iter().map(|&v| num(v))))
        .entry("baseline_shape", num(design.baseline.shape()))
        .entry("baseline_rate", num(design.baseline.rate()))
        .entry("nu", num(result.nu));
    let study = Section::new("study")
        .entry("variant", result.variant.as_str())
        .entry("replicates", result.replicates.to_string())
        .entry("failures", result.failures.to_string())
        .entry("flagged", result.flagged.to_string())
        .entry("mean_censored_fraction", num(result.mean_censored_fraction))
        .entry("crossing_truth", opt_num(result.crossing_truth))
        .entry("crossing_no_root", result.crossing_no_root.to_string());
    let mut metrics = Table::new(["parameter", "truth", "est", "se", "sde", "rb", "cov", "count"]);
    for m in &result.metrics {
        metrics_row(&mut metrics, m);
    }
    if let Some(m) = &result.crossing {
        metrics_row(&mut metrics, m);
    }

    let with_crossing = result.crossing_truth.is_some();
    let mut columns = vec!["replicate".to_string(), "status".into(), "censored_fraction".into()];
    columns.extend(result.labels.iter().cloned());
    if with_crossing {
        columns.push("t_star".into());
    }
    let mut reps = Table::new(columns);
    let mut failures = Section::new("failures");
    for o in &result.outcomes {
        let ok = o.failure.is_none();
        let mut row =
            vec![o.replicate.to_string(), if ok { "ok" } else { "failed" }.to_string(), num(o.censored_fraction)];
        row.extend((0..result.labels.len()).map(|j| opt_num(o.estimates.get(j).copied())));
        if with_crossing {
            row.push(opt_num(o.crossing.as_ref().and_then(|c| c.estimate).filter(|_| ok)));
        }
        reps.push(row);
        if let Some(msg) = &o.failure {
            failures.push(&format!("replicate_{}", o.replicate), msg.clone());
        }
    }
    let mut sections = vec![design_section, study, Section::new("metrics").with_table(metrics)];
    if !failures.entries.is_empty() {
        sections.push(failures);
    }
    sections.push(Section::new("replicates").with_table(reps));
    sections
}

fn dump_datasets(design: &SimulationDesign, nu: f64, seed: u64, replicates: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    for r in 0..replicates as u64 {
        let data = generate_dataset(design, nu, seed, r)?;
        save_dataset(&data, &dir.join(format!("replicate_{r:05}.csv")))?;
    }
    Ok(())
}
