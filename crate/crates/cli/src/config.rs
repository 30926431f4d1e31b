//! Fully resolved run configuration. It is embedded in every report and can
//! be parsed back to replay the run.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use ypbp::simulation::Censoring;
use ypbp::Variant;

use crate::error::{CliError, Result};
use crate::report::Section;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Crossing,
    Simulate,
    Curves,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Crossing => "crossing",
            Command::Simulate => "simulate",
            Command::Curves => "curves",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fit" => Ok(Command::Fit),
            "crossing" => Ok(Command::Crossing),
            "simulate" => Ok(Command::Simulate),
            "curves" => Ok(Command::Curves),
            other => Err(CliError::config(format!("unknown command '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    Ml,
    Bayes,
}

impl Inference {
    pub fn as_str(self) -> &'static str {
        match self {
            Inference::Ml => "ml",
            Inference::Bayes => "bayes",
        }
    }
}

impl FromStr for Inference {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" => Ok(Inference::Ml),
            "bayes" => Ok(Inference::Bayes),
            other => Err(CliError::config(format!("unknown inference '{other}' (expected ml or bayes)"))),
        }
    }
}

/// Sampler settings for Bayesian inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesSettings {
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub prior_sd: f64,
}

impl Default for BayesSettings {
    fn default() -> Self {
        BayesSettings { chains: 4, iterations: 2000, warmup: 1000, prior_sd: 4.0 }
    }
}

/// Settings for Monte Carlo studies.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub censoring: Censoring,
    /// Bootstrap replicates per dataset for the crossing time.
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<PathBuf>,
    /// Filled in when the dataset is read; replays check it.
    pub data_sha256: Option<String>,
    pub variant: Variant,
    /// `None` picks the degree from the sample size.
    pub degree: Option<usize>,
    pub inference: Inference,
    pub level: f64,
    pub seed: Option<u64>,
    pub bayes: BayesSettings,
    /// Bootstrap replicates for the crossing command under ML.
    pub bootstrap: usize,
    /// Covariate profiles: `z` values then `x` values in file column order.
    pub profiles: Vec<Vec<f64>>,
    /// Attach a survival-curve grid to crossing reports.
    pub grid: bool,
    pub grid_points: usize,
    pub study: Option<StudySettings>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            data: None,
            data_sha256: None,
            variant: Variant::M1,
            degree: None,
            inference: Inference::Ml,
            level: 0.95,
            seed: None,
            bayes: BayesSettings::default(),
            bootstrap: 4000,
            profiles: Vec::new(),
            grid: false,
            grid_points: 512,
            study: None,
        }
    }

    fn needs_seed(&self) -> bool {
        self.command == Command::Simulate
            || self.inference == Inference::Bayes
            || (self.command == Command::Crossing && self.inference == Inference::Ml)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::config(format!("level {} must lie in (0, 1)", self.level)));
        }
        if self.needs_seed() && self.seed.is_none() {
            return Err(CliError::config(format!(
                "--seed is required for {} with {} inference",
                self.command.as_str(),
                self.inference.as_str()
            )));
        }
        if self.degree == Some(0) {
            return Err(CliError::config("degree must be positive"));
        }
        match self.command {
            Command::Simulate => {
                if self.study.is_none() {
                    return Err(CliError::config("simulate needs a scenario"));
                }
            }
            _ => {
                if self.data.is_none() {
                    return Err(CliError::config("--data is required"));
                }
            }
        }
        match self.command {
            Command::Crossing if self.profiles.len() != 2 => {
                return Err(CliError::config("crossing needs exactly two profiles"));
            }
            Command::Curves if self.profiles.is_empty() => {
                return Err(CliError::config("curves needs at least one --profile"));
            }
            _ => {}
        }
        if self.command == Command::Crossing && self.inference == Inference::Ml && self.bootstrap < 2 {
            return Err(CliError::config("--bootstrap must be at least 2"));
        }
        if matches!(self.command, Command::Crossing | Command::Curves) && self.grid_points < 2 {
            return Err(CliError::config("--grid-points must be at least 2"));
        }
        Ok(())
    }

    /// The `[config]` section, listing every setting that affects the result.
    pub fn to_section(&self) -> Section {
        let mut s = Section::new("config");
        s.push("command", self.command.as_str());
        let with_data = self.command != Command::Simulate;
        if with_data {
            s.push("data", self.data.as_deref().map_or(String::new(), |p| p.display().to_string()));
            s.push("data_sha256", self.data_sha256.clone().unwrap_or_default());
            s.push("inference", self.inference.as_str());
        }
        s.push("variant", self.variant.as_str());
        s.push("degree", self.degree.map_or("auto".to_string(), |d| d.to_string()));
        s.push("level", self.level.to_string());
        s.push("seed", self.seed.map_or(String::new(), |v| v.to_string()));
        if with_data && self.inference == Inference::Bayes {
            s.push("chains", self.bayes.chains.to_string());
            s.push("iterations", self.bayes.iterations.to_string());
            s.push("warmup", self.bayes.warmup.to_string());
            s.push("prior_sd", self.bayes.prior_sd.to_string());
        }
        match self.command {
            Command::Crossing => {
                if self.inference == Inference::Ml {
                    s.push("bootstrap", self.bootstrap.to_string());
                }
                let profile = |i: usize| self.profiles.get(i).map_or(String::new(), |p| values(p));
                s.push("profile_a", profile(0));
                s.push("profile_b", profile(1));
                s.push("grid", self.grid.to_string());
                if self.grid {
                    s.push("grid_points", self.grid_points.to_string());
                }
            }
            Command::Curves => {
                s.push("profiles", self.profiles.iter().map(|p| values(p)).collect::<Vec<_>>().join(";"));
                s.push("grid_points", self.grid_points.to_string());
            }
            Command::Simulate => {
                let Some(study) = self.study.as_ref() else { return s };
                s.push("scenario", study.scenario.clone());
                s.push("n", study.n.to_string());
                s.push("replicates", study.replicates.to_string());
                match study.censoring {
                    Censoring::Target(r) => s.push("censoring_rate", r.to_string()),
                    Censoring::Bound(nu) => s.push("nu", nu.to_string()),
                }
                s.push("bootstrap", study.bootstrap.map_or("0".to_string(), |b| b.to_string()));
            }
            Command::Fit => {}
        }
        s
    }

    pub fn from_section(section: &Section) -> Result<Self> {
        let get = |key: &str| section.get(key).ok_or_else(|| CliError::config(format!("config is missing '{key}'")));
        let parse = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| CliError::config(format!("config '{key}' is not a number")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| CliError::config(format!("config '{key}' is not a count")))
        };
        let mut c = RunConfig::new(get("command")?.parse()?);
        let with_data = c.command != Command::Simulate;
        c.variant = get("variant")?.parse()?;
        c.degree = match get("degree")? {
            "auto" => None,
            d => Some(d.parse().map_err(|_| CliError::config("config 'degree' is not a count"))?),
        };
        c.level = parse("level")?;
        c.seed = match get("seed")? {
            "" => None,
            v => Some(v.parse().map_err(|_| CliError::config("config 'seed' is not an integer"))?),
        };
        if with_data {
            c.data = Some(PathBuf::from(get("data")?));
            c.data_sha256 = Some(get("data_sha256")?.to_string()).filter(|h| !h.is_empty());
            c.inference = get("inference")?.parse()?;
            if c.inference == Inference::Bayes {
                c.bayes = BayesSettings {
                    chains: parse_usize("chains")?,
                    iterations: parse_usize("iterations")?,
                    warmup: parse_usize("warmup")?,
                    prior_sd: parse("prior_sd")?,
                };
            }
        }
        match c.command {
            Command::Crossing => {
                if c.inference == Inference::Ml {
                    c.bootstrap = parse_usize("bootstrap")?;
                }
                c.profiles = vec![parse_values(get("profile_a")?)?, parse_values(get("profile_b")?)?];
                c.grid = get("grid")? == "true";
                if c.grid {
                    c.grid_points = parse_usize("grid_points")?;
                }
            }
            Command::Curves => {
                c.profiles = get("profiles")?.split(';').map(parse_values).collect::<Result<_>>()?;
                c.grid_points = parse_usize("grid_points")?;
            }
            Command::Simulate => {
                let censoring = match (section.get("censoring_rate"), section.get("nu")) {
                    (Some(_), _) => Censoring::Target(parse("censoring_rate")?),
                    (None, Some(_)) => Censoring::Bound(parse("nu")?),
                    _ => return Err(CliError::config("config needs censoring_rate or nu")),
                };
                let b = parse_usize("bootstrap")?;
                c.study = Some(StudySettings {
                    scenario: get("scenario")?.to_string(),
                    n: parse_usize("n")?,
                    replicates: parse_usize("replicates")?,
                    censoring,
                    bootstrap: (b > 0).then_some(b),
                });
            }
            Command::Fit => {}
        }
        Ok(c)
    }

    /// SHA-256 of the rendered `[config]` section.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.to_section().entries {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(v);
            text.push('\n');
        }
        hex(&Sha256::digest(text.as_bytes()))
    }
}

/// Comma-separated values in shortest round-trip form.
pub fn values(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::config(format!("'{s}' is not a comma-separated list of numbers")))?;
    if v.is_empty() {
        return Err(CliError::config("empty value list"));
    }
    Ok(v)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
