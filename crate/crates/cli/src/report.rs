//! Structured-text reports: `[section]` headers, `key = value` entries and
//! optional whitespace-separated tables introduced by a `columns` entry.

use std::fmt::{self, Write as _};

use crate::error::{CliError, Result};

pub const FORMAT: &str = "ypbp-report/1";
const COLUMNS_KEY: &str = "columns";
const MISSING: &str = "NA";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    /// Cells are sanitised so each row stays one whitespace-separated line.
    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row.into_iter().map(|c| cell(&c)).collect());
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Row whose first cell equals `key`.
    pub fn row(&self, key: &str) -> Option<&[String]> {
        self.rows.iter().find(|r| r.first().is_some_and(|c| c == key)).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
    pub table: Option<Table>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section { name: name.into(), entries: Vec::new(), table: None }
    }

    pub fn entry(mut self, key: &str, value: impl Into<String>) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), single_line(&value.into())));
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.table = Some(table);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub sections: Vec<Section>,
}

impl Report {
    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn has_error(&self) -> bool {
        self.section("error").is_some()
    }

    pub fn parse(text: &str, source: &str) -> Result<Report> {
        let err = |line: usize, message: &str| CliError::Parse {
            file: source.to_string(),
            line: line as u64,
            column: "-".into(),
            message: message.to_string(),
        };
        let mut report = Report::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                report.sections.push(Section::new(name));
                continue;
            }
            let section = report.sections.last_mut().ok_or_else(|| err(i + 1, "content before the first section"))?;
            let pair = line.strip_suffix(" =").map(|k| (k, "")).or_else(|| line.split_once(" = "));
            if let Some((key, value)) = pair {
                if key == COLUMNS_KEY {
                    section.table = Some(Table::new(value.split_whitespace()));
                } else {
                    section.entries.push((key.to_string(), value.to_string()));
                }
            } else {
                let table = section.table.as_mut().ok_or_else(|| err(i + 1, "table row without a columns entry"))?;
                let row: Vec<String> = line.split_whitespace().map(str::to_string).collect();
                if row.len() != table.columns.len() {
                    return Err(err(i + 1, "table row has the wrong number of cells"));
                }
                table.rows.push(row);
            }
        }
        Ok(report)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {FORMAT}")?;
        for s in &self.sections {
            writeln!(f)?;
            writeln!(f, "[{}]", s.name)?;
            for (k, v) in &s.entries {
                if v.is_empty() {
                    writeln!(f, "{k} =")?;
                } else {
                    writeln!(f, "{k} = {v}")?;
                }
            }
            if let Some(t) = &s.table {
                writeln!(f, "{COLUMNS_KEY} = {}", t.columns.join(" "))?;
                for row in &t.rows {
                    writeln!(f, "{}", row.join(" "))?;
                }
            }
        }
        Ok(())
    }
}

/// 17 significant digits; `NA` for missing or NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        MISSING.into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.into(), num)
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s {
        MISSING => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn list(values: impl IntoIterator<Item = String>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

fn cell(s: &str) -> String {
    if s.is_empty() {
        return MISSING.into();
    }
    s.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

fn single_line(s: &str) -> String {
    s.lines().map(str::trim).collect::<Vec<_>>().join(" ")
}
