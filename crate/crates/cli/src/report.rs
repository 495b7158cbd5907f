//! Experiment reports and their two file formats.
//!
//! The machine format is a four-column CSV (`section,key,label,value`)
//! preceded by a format-version line. Floats are written with 17
//! significant digits so reading a file back yields the identical report.

use std::fmt::Write as _;
use std::path::Path;

use gsi_core::{GsiError, Result};
use serde::{Deserialize, Serialize};

use crate::io::fmt_f64;

pub const REPORT_FORMAT_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "gsi-report-format";
const HEADER: [&str; 4] = ["section", "key", "label", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Human,
    Machine,
}

/// A labelled numeric table: one row per method, level or target.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((label.into(), values));
    }

    pub fn get(&self, label: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(l, _)| l == label).map(|(_, v)| v[c])
    }

    pub fn column(&self, column: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.rows.iter().map(|(_, v)| v[c]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    /// Free-form facts such as the task name and the config echo.
    pub meta: Vec<(String, String)>,
    /// Resolved per-stage seeds.
    pub seeds: Vec<(String, u64)>,
    pub scalars: Vec<(String, f64)>,
    pub table: ResultTable,
    /// Wall-clock seconds per stage; not part of the reproducible payload.
    pub timings: Vec<(String, f64)>,
}

impl Report {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn without_timings(&self) -> Self {
        Self {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    fn records(&self, timings: bool) -> Vec<[String; 4]> {
        let mut out = Vec::new();
        let rec = |s: &str, k: &str, l: &str, v: String| [s.to_string(), k.to_string(), l.to_string(), v];
        for (k, v) in &self.meta {
            out.push(rec("meta", k, "", v.clone()));
        }
        for (k, v) in &self.seeds {
            out.push(rec("seed", k, "", v.to_string()));
        }
        for (k, v) in &self.scalars {
            out.push(rec("scalar", k, "", fmt_f64(*v)));
        }
        for (i, c) in self.table.columns.iter().enumerate() {
            out.push(rec("column", &i.to_string(), "", c.clone()));
        }
        for (label, values) in &self.table.rows {
            for (c, v) in self.table.columns.iter().zip(values) {
                out.push(rec("cell", label, c, fmt_f64(*v)));
            }
        }
        if timings {
            for (k, v) in &self.timings {
                out.push(rec("timing", k, "", fmt_f64(*v)));
            }
        }
        out
    }

    /// The machine format; `timings = false` gives the reproducible body.
    pub fn to_machine_string(&self, timings: bool) -> Result<String> {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        let ser = |e: csv::Error| GsiError::Serde(e.to_string());
        writer.write_record(HEADER).map_err(ser)?;
        for r in self.records(timings) {
            writer.write_record(&r).map_err(ser)?;
        }
        let body = writer.into_inner().map_err(|e| GsiError::Serde(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| GsiError::Serde(e.to_string()))?;
        Ok(format!("{VERSION_PREFIX},{REPORT_FORMAT_VERSION}\n{body}"))
    }

    pub fn from_machine_str(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let version = first
            .trim_end_matches('\r')
            .strip_prefix(VERSION_PREFIX)
            .and_then(|v| v.strip_prefix(','))
            .ok_or_else(|| GsiError::Parse {
                line: 1,
                msg: format!("missing `{VERSION_PREFIX},<version>` line"),
            })?;
        if version.trim() != REPORT_FORMAT_VERSION.to_string() {
            return Err(GsiError::Parse {
                line: 1,
                msg: format!("unsupported report format version {version}"),
            });
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let header = reader.headers().map_err(|e| GsiError::Parse {
            line: 2,
            msg: e.to_string(),
        })?;
        if header.iter().ne(HEADER) {
            return Err(GsiError::Parse {
                line: 2,
                msg: format!("expected header {}", HEADER.join(",")),
            });
        }
        let mut report = Report::default();
        for record in reader.records() {
            let record = record.map_err(|e| GsiError::Parse {
                line: 1 + e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = 1 + record.position().map_or(0, |p| p.line());
            let bad = |msg: String| GsiError::Parse { line, msg };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
            let (section, key, label, value) = (&record[0], &record[1], &record[2], &record[3]);
            match section {
                "meta" => report.meta.push((key.into(), value.into())),
                "seed" => report
                    .seeds
                    .push((key.into(), value.parse().map_err(|_| bad(format!("bad seed `{value}`")))?)),
                "scalar" => report.scalars.push((key.into(), num(value)?)),
                "column" => {
                    if key != report.table.columns.len().to_string() {
                        return Err(bad(format!("column index {key} out of order")));
                    }
                    report.table.columns.push(value.into());
                }
                "cell" => {
                    let c = report
                        .table
                        .columns
                        .iter()
                        .position(|x| x == label)
                        .ok_or_else(|| bad(format!("unknown column `{label}`")))?;
                    if c == 0 {
                        report.table.rows.push((key.into(), Vec::with_capacity(report.table.columns.len())));
                    }
                    let row = report
                        .table
                        .rows
                        .last_mut()
                        .filter(|(l, v)| l == key && v.len() == c)
                        .ok_or_else(|| bad(format!("cell `{key}`/`{label}` out of order")))?;
                    row.1.push(num(value)?);
                }
                "timing" => report.timings.push((key.into(), num(value)?)),
                other => return Err(bad(format!("unknown section `{other}`"))),
            }
        }
        if let Some((label, _)) = report.table.rows.iter().find(|(_, v)| v.len() != report.table.columns.len()) {
            return Err(GsiError::Parse {
                line: 0,
                msg: format!("row `{label}` is incomplete"),
            });
        }
        Ok(report)
    }

    pub fn to_human_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            if k == "config" {
                continue;
            }
            let _ = writeln!(out, "{k}: {v}");
        }
        for (k, v) in &self.scalars {
            let _ = writeln!(out, "{k}: {v:.6}");
        }
        if !self.table.columns.is_empty() {
            let label_w = self.table.rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
            let col_w: Vec<usize> = self.table.columns.iter().map(|c| c.len().max(10)).collect();
            let _ = write!(out, "\n{:label_w$}", "");
            for (c, w) in self.table.columns.iter().zip(&col_w) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
            for (label, values) in &self.table.rows {
                let _ = write!(out, "{label:label_w$}");
                for (v, w) in values.iter().zip(&col_w) {
                    let _ = write!(out, "  {v:>w$.4}");
                }
                out.push('\n');
            }
        }
        if !self.seeds.is_empty() {
            out.push_str("\nseeds:\n");
            for (k, v) in &self.seeds {
                let _ = writeln!(out, "  {k}: {v}");
            }
        }
        if !self.timings.is_empty() {
            out.push_str("\ntimings (s):\n");
            for (k, v) in &self.timings {
                let _ = writeln!(out, "  {k}: {v:.3}");
            }
        }
        out
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Human => report.to_human_string(),
        ReportFormat::Machine => report.to_machine_string(true)?,
    };
    std::fs::write(path, text).map_err(|e| GsiError::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GsiError::io(path, e))?;
    Report::from_machine_str(&text)
}
