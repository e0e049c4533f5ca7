//! Static SVG plots of loss curves and metric bars.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#333333"];

/// A named series of `(x, y)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(svg: &mut String, title: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0).unwrap();
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    writeln!(svg, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#).unwrap();
    writeln!(svg, r#"<text x="{l}" y="{}" text-anchor="middle">{}</text>"#, b + 15.0, fmt(x0)).unwrap();
    writeln!(svg, r#"<text x="{r}" y="{}" text-anchor="middle">{}</text>"#, b + 15.0, fmt(x1)).unwrap();
    writeln!(svg, r#"<text x="{}" y="{b}" text-anchor="end">{}</text>"#, l - 4.0, fmt(y0)).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, t + 4.0, fmt(y1)).unwrap();
}

fn fmt(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Line chart with one polyline per series; an empty input gives bare axes.
pub fn line_chart_svg(title: &str, series: &[Series]) -> String {
    let xr = finite_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = finite_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut svg = String::new();
    axes(&mut svg, title, xr, yr);
    let sx = |x: f64| MARGIN + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !pts.is_empty() {
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, pts.join(" ")).unwrap();
        }
        let ly = MARGIN + 14.0 * i as f64;
        writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, W - MARGIN - 80.0, s.name).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart of named values.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let yr = finite_range(bars.iter().map(|b| b.1).chain([0.0]));
    let mut svg = String::new();
    axes(&mut svg, title, (0.0, bars.len() as f64), yr);
    let slot = (W - 2.0 * MARGIN) / bars.len().max(1) as f64;
    let sy = |y: f64| H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);
    for (i, (name, v)) in bars.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let x = MARGIN + slot * (i as f64 + 0.15);
        let (top, base) = (sy(v.max(0.0)), sy(v.min(0.0)));
        writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            slot * 0.7,
            (base - top).max(0.5),
            PALETTE[i % PALETTE.len()]
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{name}={}</text>"#,
            x + slot * 0.35,
            top - 4.0,
            fmt(*v)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Parses a numeric CSV with a header row.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Ok((Vec::new(), Vec::new())),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Format(format!("{}: row {} has {} fields", path.display(), i + 2, row.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes `losses.svg` (one curve per loss column against the first column)
/// and `metrics.svg` into `out_dir`.
pub fn plot_report(
    loss_header: &[String],
    loss_rows: &[Vec<f64>],
    metrics: &[(String, f64)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let series: Vec<Series> = (1..loss_header.len())
        .map(|c| Series {
            name: loss_header[c].clone(),
            points: loss_rows.iter().map(|r| (r[0], r[c])).collect(),
        })
        .collect();
    let loss_path = out_dir.join("losses.svg");
    std::fs::write(&loss_path, line_chart_svg("training losses", &series)).map_err(|e| Error::io(&loss_path, e))?;
    let metric_path = out_dir.join("metrics.svg");
    std::fs::write(&metric_path, bar_chart_svg("evaluation", metrics)).map_err(|e| Error::io(&metric_path, e))?;
    Ok(vec![loss_path, metric_path])
}
