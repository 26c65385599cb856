//! Multi-source report tables and the 5×5 situation parameter matrix.
//!
//! Report tables arrive as CSV with a `source,year,<indicator...>` header.
//! Counts are kept as signed integers so that [`validate`] can describe a
//! negative cell instead of the parser rejecting it outright.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2100;
pub const MATRIX_DIM: usize = 5;

/// One source's counts for every indicator column, in declared order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceReport {
    #[serde(rename = "source")]
    pub source_id: String,
    pub year: i32,
    pub values: IndexMap<String, i64>,
}

impl SourceReport {
    pub fn get(&self, indicator: &str) -> Option<i64> {
        self.values.get(indicator).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<SourceReport>,
}

/// A single invariant violation, located by row index and/or column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub row: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

impl Violation {
    fn table(message: impl Into<String>) -> Self {
        Self {
            row: None,
            column: None,
            message: message.into(),
        }
    }

    fn cell(row: usize, column: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            row: Some(row),
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.row, &self.column) {
            (Some(r), Some(c)) => write!(f, "row {r}, column {c}: {}", self.message),
            (Some(r), None) => write!(f, "row {r}: {}", self.message),
            (None, Some(c)) => write!(f, "column {c}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl ReportTable {
    /// Column of counts as reals, in row order.
    pub fn column_values(&self, indicator: &str) -> Result<Vec<f64>> {
        if !self.columns.iter().any(|c| c == indicator) {
            return Err(Error::Input(format!(
                "unknown indicator column `{indicator}`"
            )));
        }
        self.rows
            .iter()
            .map(|r| {
                r.get(indicator).map(|v| v as f64).ok_or_else(|| {
                    Error::Input(format!("row `{}` lacks `{indicator}`", r.source_id))
                })
            })
            .collect()
    }

    pub fn source_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.source_id.clone()).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["source".to_owned(), "year".to_owned()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for row in &self.rows {
            let mut rec = vec![row.source_id.clone(), row.year.to_string()];
            for c in &self.columns {
                rec.push(row.get(c).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(csv_io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads the canonical JSON form and checks every invariant.
    pub fn from_json(text: &str) -> Result<Self> {
        let table: ReportTable = serde_json::from_str(text)?;
        let violations = validate(&table);
        if violations.is_empty() {
            Ok(table)
        } else {
            Err(Error::Validation(violations))
        }
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses a report table from CSV text.
///
/// Fails on malformed CSV (with a line number), on a header that repeats an
/// indicator, and on any invariant violation reported by [`validate`].
pub fn parse_report_table(text: &str) -> Result<ReportTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes());

    let header = reader.headers().map_err(csv_error)?.clone();
    if header.len() < 3 {
        return Err(Error::Schema(
            "header must be `source,year,<indicator...>` with at least one indicator".into(),
        ));
    }
    if &header[0] != "source" || &header[1] != "year" {
        return Err(Error::Schema(format!(
            "header must start with `source,year`, found `{},{}`",
            &header[0], &header[1]
        )));
    }
    let columns: Vec<String> = header.iter().skip(2).map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for c in &columns {
        if c.is_empty() {
            return Err(Error::Schema("empty indicator name in header".into()));
        }
        if !seen.insert(c.as_str()) {
            return Err(Error::Schema(format!(
                "duplicate indicator `{c}` in header"
            )));
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let year = record[1].trim().parse::<i32>().map_err(|e| Error::Parse {
            line,
            message: format!("year `{}`: {e}", &record[1]),
        })?;
        let mut values = IndexMap::with_capacity(columns.len());
        for (name, raw) in columns.iter().zip(record.iter().skip(2)) {
            let v = raw.trim().parse::<i64>().map_err(|e| Error::Parse {
                line,
                message: format!("count `{raw}` in column {name}: {e}"),
            })?;
            values.insert(name.clone(), v);
        }
        rows.push(SourceReport {
            source_id: record[0].to_owned(),
            year,
            values,
        });
    }

    let table = ReportTable { columns, rows };
    let violations = validate(&table);
    if violations.is_empty() {
        Ok(table)
    } else {
        Err(Error::Validation(violations))
    }
}

/// Every invariant violation in `table`; empty when the table is valid.
pub fn validate(table: &ReportTable) -> Vec<Violation> {
    let mut out = Vec::new();

    if table.rows.len() < 2 {
        out.push(Violation::table(format!(
            "k < 2: need ≥ 2 rows, found {}",
            table.rows.len()
        )));
    }

    let mut seen = HashSet::new();
    for c in &table.columns {
        if !seen.insert(c.as_str()) {
            out.push(Violation {
                row: None,
                column: Some(c.clone()),
                message: "duplicate indicator column".into(),
            });
        }
    }

    for (i, row) in table.rows.iter().enumerate() {
        if !(MIN_YEAR..=MAX_YEAR).contains(&row.year) {
            out.push(Violation::cell(
                i,
                Some("year"),
                format!("year {} outside [{MIN_YEAR}, {MAX_YEAR}]", row.year),
            ));
        }
        for c in &table.columns {
            match row.values.get(c) {
                None => out.push(Violation::cell(i, Some(c), "missing declared column")),
                Some(&v) if v < 0 => {
                    out.push(Violation::cell(i, Some(c), format!("negative count {v}")))
                }
                Some(_) => {}
            }
        }
        for k in row.values.keys() {
            if !table.columns.contains(k) {
                out.push(Violation::cell(i, Some(k), "undeclared column"));
            }
        }
    }
    out
}

/// The 5×5 matrix of first-level factors (rows) by second-level factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMatrix {
    pub entries: Vec<Vec<f64>>,
    pub factor_labels: Vec<String>,
    pub subfactor_labels: Vec<Vec<String>>,
}

impl ParameterMatrix {
    /// Entries flattened row-major: index `5*m + n` holds `a_{m+1,n+1}`.
    pub fn flat(&self) -> Vec<f64> {
        self.entries.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.entries.len() != MATRIX_DIM {
            out.push(Violation::table(format!(
                "expected {MATRIX_DIM} rows, found {}",
                self.entries.len()
            )));
        }
        for (i, r) in self.entries.iter().enumerate() {
            if r.len() != MATRIX_DIM {
                out.push(Violation::cell(
                    i,
                    None,
                    format!("expected {MATRIX_DIM} columns, found {}", r.len()),
                ));
            }
        }
        if self.factor_labels.len() != MATRIX_DIM {
            out.push(Violation::table(format!(
                "expected {MATRIX_DIM} factor labels, found {}",
                self.factor_labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for (i, l) in self.factor_labels.iter().enumerate() {
            if l.trim().is_empty() {
                out.push(Violation::cell(i, Some("factor_label"), "empty label"));
            } else if !seen.insert(l.as_str()) {
                out.push(Violation::cell(i, Some("factor_label"), "duplicate label"));
            }
        }
        if self.subfactor_labels.len() != MATRIX_DIM {
            out.push(Violation::table(format!(
                "expected {MATRIX_DIM} subfactor label rows, found {}",
                self.subfactor_labels.len()
            )));
        }
        for (i, r) in self.subfactor_labels.iter().enumerate() {
            if r.len() != MATRIX_DIM {
                out.push(Violation::cell(
                    i,
                    Some("subfactor_labels"),
                    "expected 5 labels",
                ));
            }
            if r.iter().any(|l| l.trim().is_empty()) {
                out.push(Violation::cell(i, Some("subfactor_labels"), "empty label"));
            }
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ParameterMatrix = serde_json::from_str(text)?;
        let v = m.validate();
        if v.is_empty() {
            Ok(m)
        } else {
            Err(Error::Validation(v))
        }
    }
}
