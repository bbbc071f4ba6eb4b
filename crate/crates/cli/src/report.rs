//! Report assembly and rendering to JSON or CSV.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QAGF_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:?}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Cell {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Cell {
        Cell::Int(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Cell {
        Cell::Text(v)
    }
}

/// Outcome of one command: a table, a summary and any accuracy failures.
#[derive(Debug)]
pub struct Report {
    pub command: &'static str,
    pub parameters: Value,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Value,
    pub failures: Vec<String>,
    pub default_format: Format,
}

impl Report {
    pub fn new(command: &'static str, parameters: Value, columns: Vec<&'static str>, default_format: Format) -> Report {
        Report { command, parameters, columns, rows: Vec::new(), summary: json!({}), failures: Vec::new(), default_format }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    /// Records an accuracy failure when `ok` is false.
    pub fn require(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(message());
        }
    }

    pub fn accuracy_reached(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => {
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "command": self.command,
                    "parameters": self.parameters,
                    "status": if self.accuracy_reached() { "ok" } else { "accuracy_not_reached" },
                    "failures": self.failures,
                    "columns": self.columns,
                    "rows": self.rows,
                    "summary": self.summary,
                });
                let mut s = serde_json::to_string_pretty(&doc)?;
                s.push('\n');
                Ok(s)
            }
            Format::Csv => {
                let mut s = self.columns.join(",");
                s.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    writeln!(s, "{}", cells.join(","))?;
                }
                Ok(s)
            }
        }
    }

    /// Writes to `output`, else to `$QAGF_OUT_DIR/<command>.<ext>`, else to
    /// standard output. Returns the path written, if any.
    pub fn emit(&self, format: Option<Format>, output: Option<&Path>) -> Result<Option<PathBuf>> {
        let format = format.unwrap_or(self.default_format);
        let text = self.render(format)?;
        let path = match output {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(OUT_DIR_ENV).map(|dir| {
                PathBuf::from(dir).join(format!("{}.{}", self.command, format.extension()))
            }),
        };
        match &path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
                }
                std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            }
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_stable_header_and_lf_endings() {
        let mut r = Report::new("demo", json!({}), vec!["n", "value"], Format::Csv);
        r.row(vec![2u64.into(), 0.5.into()]);
        r.row(vec![4u64.into(), f64::NAN.into()]);
        assert_eq!(r.render(Format::Csv).unwrap(), "n,value\n2,0.5\n4,NaN\n");
    }

    #[test]
    fn json_carries_schema_version_and_status() {
        let mut r = Report::new("demo", json!({"a": 1}), vec!["n"], Format::Json);
        r.require(false, || "too far".into());
        let v: Value = serde_json::from_str(&r.render(Format::Json).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["status"], "accuracy_not_reached");
        assert_eq!(v["failures"][0], "too far");
    }
}
