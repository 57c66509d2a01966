//! Tabular reports written as CSV or JSON.
//!
//! CSV: a header row, then one row per record; the last two columns are
//! always `config_sha256` and `seed`. JSON: an object with keys `command`,
//! `config_sha256`, `seed`, `summary` (object), `columns` (array) and `rows`
//! (array of objects keyed by column). Floats carry 17 significant digits;
//! non-finite values are written as `inf`, `-inf` or `NaN` (strings in JSON).

use std::fmt::Write as _;

use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

fn float_text(v: f64) -> Option<String> {
    if v.is_nan() {
        Some("NaN".into())
    } else if v.is_infinite() {
        Some(if v > 0.0 { "inf" } else { "-inf" }.into())
    } else {
        None
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => float_text(*v).unwrap_or_else(|| format!("{v:.16e}")),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n', '\r']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => match float_text(*v) {
                Some(t) => serde_json::to_string(&t).expect("string"),
                None => format!("{v:.16e}"),
            },
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => serde_json::to_string(s).expect("string"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<(String, Cell)>,
    /// Set when a numerical result is only partially trustworthy.
    pub flagged: bool,
}

impl Report {
    pub fn new(command: &str, columns: &[&str]) -> Self {
        Self {
            command: command.to_string(),
            config_hash: String::new(),
            seed: 0,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: Vec::new(),
            flagged: false,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl Into<Cell>) {
        self.summary.push((key.to_string(), value.into()));
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.csv(),
            Format::Json => self.json(),
        }
    }

    fn csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(String::as_str).chain(["config_sha256", "seed"]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut cells: Vec<String> = row.iter().map(Cell::csv).collect();
            cells.push(self.config_hash.clone());
            cells.push(self.seed.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    fn json(&self) -> String {
        let s = |t: &str| serde_json::to_string(t).expect("string");
        let mut out = String::from("{\n");
        let _ = writeln!(out, "  \"command\": {},", s(&self.command));
        let _ = writeln!(out, "  \"config_sha256\": {},", s(&self.config_hash));
        let _ = writeln!(out, "  \"seed\": {},", self.seed);
        let summary: Vec<String> = self.summary.iter().map(|(k, v)| format!("{}: {}", s(k), v.json())).collect();
        let _ = writeln!(out, "  \"summary\": {{{}}},", summary.join(", "));
        let cols: Vec<String> = self.columns.iter().map(|c| s(c)).collect();
        let _ = writeln!(out, "  \"columns\": [{}],", cols.join(", "));
        out.push_str("  \"rows\": [");
        for (i, row) in self.rows.iter().enumerate() {
            let fields: Vec<String> = self.columns.iter().zip(row).map(|(c, v)| format!("{}: {}", s(c), v.json())).collect();
            let _ = write!(out, "{}\n    {{{}}}", if i == 0 { "" } else { "," }, fields.join(", "));
        }
        out.push_str(if self.rows.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
        out
    }

    /// One line for the terminal.
    pub fn headline(&self) -> String {
        let notes: Vec<String> = self.summary.iter().take(4).map(|(k, v)| format!("{k}={}", v.csv())).collect();
        let short = &self.config_hash[..self.config_hash.len().min(12)];
        format!("{}: {} rows; {} [config {short}, seed {}]", self.command, self.rows.len(), notes.join(", "), self.seed)
    }
}
