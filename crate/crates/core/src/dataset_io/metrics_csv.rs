use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Int(i64),
    Real(f64),
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Real(v)
    }
}

impl From<usize> for MetricValue {
    fn from(v: usize) -> Self {
        MetricValue::Int(v as i64)
    }
}

/// One CSV row; column order is the order of insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricRow(pub Vec<(String, MetricValue)>);

impl MetricRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<MetricValue>) -> Self {
        self.0.push((name.to_string(), value.into()));
        self
    }

    pub fn columns(&self) -> Vec<&str> {
        self.0.iter().map(|(k, _)| k.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<MetricValue> {
        self.0.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Formats a real with 6 significant digits, `%g` style.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders rows as CSV text with a header from the first row.
pub fn metrics_to_csv(rows: &[MetricRow], header_if_empty: &[&str]) -> Result<String> {
    let header: Vec<String> = match rows.first() {
        Some(r) => r.columns().iter().map(|s| s.to_string()).collect(),
        None => header_if_empty.iter().map(|s| s.to_string()).collect(),
    };
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.columns() != header {
            return Err(Error::Validation(format!(
                "metric row {i} has columns {:?}, expected {header:?}",
                row.columns()
            )));
        }
        let cells: Vec<String> = row
            .0
            .iter()
            .map(|(_, v)| match v {
                MetricValue::Int(i) => i.to_string(),
                MetricValue::Real(r) => format_sig6(*r),
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    Ok(out)
}

/// Writes metric rows to `path`. All rows must share one column set; an
/// empty row list produces a header-only file using `header_if_empty`.
pub fn write_metrics_csv(rows: &[MetricRow], header_if_empty: &[&str], path: &Path) -> Result<()> {
    let text = metrics_to_csv(rows, header_if_empty)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
