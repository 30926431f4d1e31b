//! Comma-separated survival datasets: `time`, `status`, then `z_` and `x_`
//! covariate columns.

use std::io::{Read, Write};
use std::path::Path;

use ypbp::SurvivalDataset;

use crate::error::{CliError, Result};

const TIME: &str = "time";
const STATUS: &str = "status";
const Z_PREFIX: &str = "z_";
const X_PREFIX: &str = "x_";

enum Column {
    Time,
    Status,
    Z(usize),
    X(usize),
}

pub fn parse_dataset(path: &Path) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    read_dataset(file, &path.display().to_string())
}

/// Parse a dataset; `source` names the input in error messages.
pub fn read_dataset<R: Read>(reader: R, source: &str) -> Result<SurvivalDataset> {
    let parse_err = |line: u64, column: &str, message: String| CliError::Parse {
        file: source.to_string(),
        line,
        column: column.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, "-", e.to_string()))?.clone();
    let mut columns = Vec::with_capacity(headers.len());
    let mut z_names = Vec::new();
    let mut x_names = Vec::new();
    let (mut has_time, mut has_status) = (false, false);
    for name in headers.iter() {
        let name = name.trim();
        let col = if name == TIME && !has_time {
            has_time = true;
            Column::Time
        } else if name == STATUS && !has_status {
            has_status = true;
            Column::Status
        } else if let Some(rest) = name.strip_prefix(Z_PREFIX).filter(|r| !r.is_empty()) {
            z_names.push(rest.to_string());
            Column::Z(z_names.len() - 1)
        } else if let Some(rest) = name.strip_prefix(X_PREFIX).filter(|r| !r.is_empty()) {
            x_names.push(rest.to_string());
            Column::X(x_names.len() - 1)
        } else {
            return Err(parse_err(1, name, "unexpected or duplicate column; expected time, status, z_* or x_*".into()));
        };
        columns.push(col);
    }
    for (present, name) in [(has_time, TIME), (has_status, STATUS)] {
        if !present {
            return Err(parse_err(1, name, "required column is missing".into()));
        }
    }
    if z_names.is_empty() {
        return Err(parse_err(1, "z_*", "at least one z_ covariate column is required".into()));
    }

    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut z_rows = Vec::new();
    let mut x_rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, "-", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut z = vec![0.0; z_names.len()];
        let mut x = vec![0.0; x_names.len()];
        let (mut time, mut status) = (0.0, false);
        for ((cell, col), header) in record.iter().zip(&columns).zip(headers.iter()) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(parse_err(line, header, "missing value".into()));
            }
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line, header, format!("'{cell}' is not a finite decimal number")))?;
            match col {
                Column::Time if value > 0.0 => time = value,
                Column::Time => return Err(parse_err(line, header, format!("time {cell} must be positive"))),
                Column::Status if value == 0.0 || value == 1.0 => status = value == 1.0,
                Column::Status => return Err(parse_err(line, header, format!("status {cell} must be 0 or 1"))),
                Column::Z(j) => z[*j] = value,
                Column::X(j) => x[*j] = value,
            }
        }
        times.push(time);
        events.push(status);
        z_rows.push(z);
        x_rows.push(x);
    }
    if x_names.is_empty() {
        x_rows.clear();
    }
    let data = SurvivalDataset::new(times, events, z_rows, x_rows)
        .and_then(|d| d.with_names(z_names, x_names))
        .map_err(|e| parse_err(0, "-", e.to_string()))?;
    Ok(data)
}

/// Write a dataset in the same layout; values use the shortest
/// representation that parses back to the same number.
pub fn write_dataset<W: Write>(data: &SurvivalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| CliError::config(format!("failed to write dataset: {e}"));
    let mut header = vec![TIME.to_string(), STATUS.to_string()];
    header.extend(data.z_names().iter().map(|n| format!("{Z_PREFIX}{n}")));
    header.extend(data.x_names().iter().map(|n| format!("{X_PREFIX}{n}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let mut row = vec![data.times()[i].to_string(), u8::from(data.events()[i]).to_string()];
        row.extend(data.z_row(i).iter().map(f64::to_string));
        row.extend(data.x_row(i).iter().map(f64::to_string));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| CliError::io("dataset output", e))?;
    Ok(())
}

pub fn save_dataset(data: &SurvivalDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    write_dataset(data, std::io::BufWriter::new(file))
}
