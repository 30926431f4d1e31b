use crate::error::{Error, Result};
use crate::model::CovariateRow;

/// Right-censored observations with a time-varying-effect covariate block `z`
/// (q columns) and an optional constant-effect block `x` (p columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    events: Vec<bool>,
    z: Vec<f64>,
    x: Vec<f64>,
    q: usize,
    p: usize,
    z_names: Vec<String>,
    x_names: Vec<String>,
    tau_hat: f64,
}

fn flatten(rows: &[Vec<f64>], n: usize, block: &str) -> Result<(Vec<f64>, usize)> {
    if rows.is_empty() {
        return Ok((Vec::new(), 0));
    }
    if rows.len() != n {
        return Err(Error::dim(format!("{block} block has {} rows for {n} observations", rows.len())));
    }
    let width = rows[0].len();
    let mut flat = Vec::with_capacity(n * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::dim(format!("{block} row {i} has {} columns, expected {width}", r.len())));
        }
        if let Some(v) = r.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("{block} row {i} has non-finite value {v}")));
        }
        flat.extend_from_slice(r);
    }
    Ok((flat, width))
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|j| format!("{prefix}{j}")).collect()
}

impl SurvivalDataset {
    /// `x_rows` may be empty for datasets without a constant-effect block.
    pub fn new(times: Vec<f64>, events: Vec<bool>, z_rows: Vec<Vec<f64>>, x_rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no observations".into()));
        }
        if events.len() != n {
            return Err(Error::dim(format!("{} status values for {n} times", events.len())));
        }
        if let Some((i, t)) = times.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidData(format!("time {t} at row {i} is not positive and finite")));
        }
        if !events.iter().any(|&e| e) {
            return Err(Error::InvalidData("dataset contains no events (all observations censored)".into()));
        }
        let (z, q) = flatten(&z_rows, n, "z")?;
        if q == 0 {
            return Err(Error::dim("at least one time-varying-effect covariate is required"));
        }
        let (x, p) = flatten(&x_rows, n, "x")?;
        let tau_hat = times.iter().copied().fold(0.0, f64::max);
        Ok(Self { times, events, z, x, q, p, z_names: default_names("z", q), x_names: default_names("x", p), tau_hat })
    }

    pub fn with_names(mut self, z_names: Vec<String>, x_names: Vec<String>) -> Result<Self> {
        if z_names.len() != self.q || x_names.len() != self.p {
            return Err(Error::dim("covariate name count does not match the blocks"));
        }
        self.z_names = z_names;
        self.x_names = x_names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        1.0 - self.event_count() as f64 / self.n() as f64
    }

    /// Largest observed time; the horizon of the fitted Bernstein basis.
    pub fn tau_hat(&self) -> f64 {
        self.tau_hat
    }

    pub fn min_event_time(&self) -> f64 {
        self.times.iter().zip(&self.events).filter(|(_, &e)| e).map(|(t, _)| *t).fold(f64::INFINITY, f64::min)
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn row(&self, i: usize) -> CovariateRow {
        CovariateRow::new(self.z_row(i).to_vec(), self.x_row(i).to_vec())
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    /// Rows picked by index, repeats allowed (bootstrap resamples).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let times = indices.iter().map(|&i| self.times[i]).collect();
        let events = indices.iter().map(|&i| self.events[i]).collect();
        let z_rows = indices.iter().map(|&i| self.z_row(i).to_vec()).collect();
        let x_rows = if self.p == 0 { Vec::new() } else { indices.iter().map(|&i| self.x_row(i).to_vec()).collect() };
        Self::new(times, events, z_rows, x_rows)?.with_names(self.z_names.clone(), self.x_names.clone())
    }

    /// Moves the constant-effect block into the time-varying block, for
    /// fitting the original formulation on data that carries an `x` block.
    pub fn merge_constant_block(&self) -> Self {
        if self.p == 0 {
            return self.clone();
        }
        let width = self.q + self.p;
        let mut z = Vec::with_capacity(self.n() * width);
        for i in 0..self.n() {
            z.extend_from_slice(self.z_row(i));
            z.extend_from_slice(self.x_row(i));
        }
        let mut z_names = self.z_names.clone();
        z_names.extend(self.x_names.iter().cloned());
        Self {
            times: self.times.clone(),
            events: self.events.clone(),
            z,
            x: Vec::new(),
            q: width,
            p: 0,
            z_names,
            x_names: Vec::new(),
            tau_hat: self.tau_hat,
        }
    }

    /// Nelson-Aalen cumulative hazard at `t`, ignoring covariates.
    pub fn nelson_aalen(&self, t: f64) -> f64 {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
        let mut at_risk = self.n();
        let mut cumulative = 0.0;
        let mut i = 0;
        while i < order.len() {
            let time = self.times[order[i]];
            if time > t {
                break;
            }
            let mut deaths = 0usize;
            let mut leaving = 0usize;
            while i < order.len() && self.times[order[i]] == time {
                if self.events[order[i]] {
                    deaths += 1;
                }
                leaving += 1;
                i += 1;
            }
            cumulative += deaths as f64 / at_risk as f64;
            at_risk -= leaving;
        }
        cumulative
    }
}
