//! Convergence tables and plots from a finished run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::run::{CONVERGENCE, CONVERGENCE_OFFLINE, CONVERGENCE_ONLINE};
use crate::CliError;

pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_PLOT: &str = "convergence.svg";

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub dim: usize,
    pub e_p: f64,
    pub e_u: f64,
    pub energy_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub rows: Vec<Row>,
}

pub fn read_convergence(path: &Path) -> Result<Vec<Row>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
    let bad = |msg: String| CliError::Report(format!("{}: {msg}", path.display()));
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let (cd, cp, cu, ce) = (col("Dim")?, col("e_p")?, col("e_u")?, col("energy_sq")?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64, CliError> {
            rec.get(k).unwrap_or("").parse().map_err(|_| bad(format!("bad number in row {rows_len}", rows_len = rows.len() + 1)))
        };
        rows.push(Row {
            dim: rec.get(cd).unwrap_or("").parse().map_err(|_| bad("bad Dim".into()))?,
            e_p: num(cp)?,
            e_u: num(cu)?,
            energy_sq: num(ce)?,
        });
    }
    Ok(rows)
}

/// Loads whichever convergence tables the run directory holds.
pub fn load_series(dir: &Path) -> Result<Vec<Series>, CliError> {
    let mut series = Vec::new();
    for (file, name) in [(CONVERGENCE_OFFLINE, "offline"), (CONVERGENCE_ONLINE, "online"), (CONVERGENCE, "run")] {
        let path = dir.join(file);
        if path.exists() {
            series.push(Series { name: name.to_string(), rows: read_convergence(&path)? });
        }
    }
    if series.is_empty() {
        return Err(CliError::Report(format!("{}: no convergence tables found", dir.display())));
    }
    if series.iter().all(|s| s.rows.is_empty()) {
        return Err(CliError::Report(format!("{}: convergence tables are empty", dir.display())));
    }
    Ok(series)
}

pub fn format_table(series: &[Series]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<8} {:>8} {:>12} {:>12} {:>12} {:>12}", "series", "Dim", "e_p", "e_u", "sqrt(e_p)", "energy_sq").unwrap();
    for ser in series {
        for r in &ser.rows {
            writeln!(
                s,
                "{:<8} {:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                ser.name,
                r.dim,
                r.e_p,
                r.e_u,
                r.e_p.sqrt(),
                r.energy_sq
            )
            .unwrap();
        }
    }
    s
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 280.0;
const MARGIN: f64 = 50.0;

fn panel(svg: &mut String, x0: f64, title: &str, series: &[Series], value: impl Fn(&Row) -> f64) {
    let points: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| (r.dim as f64, value(r))))
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .collect();
    let (xmin, xmax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (lmin, lmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1.log10()), b.max(p.1.log10())));
    let (ymin, mut ymax) = (lmin.floor(), lmax.ceil());
    if ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let w = PANEL_W - 1.5 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let px = |x: f64| x0 + MARGIN + (x - xmin) / xspan * w;
    let py = |l: f64| MARGIN + (ymax - l) / (ymax - ymin) * h;

    writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{title}</text>"#, x0 + MARGIN + w / 2.0, MARGIN - 15.0).unwrap();
    writeln!(
        svg,
        r#"<rect x="{:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="black"/>"#,
        x0 + MARGIN,
        MARGIN
    )
    .unwrap();
    let mut d = ymin as i64;
    while d as f64 <= ymax {
        let y = py(d as f64);
        writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">1e{d}</text>"#, x0 + MARGIN - 4.0, y + 3.0).unwrap();
        writeln!(svg, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, x0 + MARGIN, x0 + MARGIN + w).unwrap();
        d += 1;
    }
    for (x, anchor) in [(xmin, "start"), (xmax, "end")] {
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" font-size="10">{}</text>"#,
            px(x),
            MARGIN + h + 14.0,
            x as usize
        )
        .unwrap();
    }
    writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">Dim</text>"#, x0 + MARGIN + w / 2.0, MARGIN + h + 30.0).unwrap();
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .rows
            .iter()
            .map(|r| (r.dim as f64, value(r)))
            .filter(|(_, v)| *v > 0.0 && v.is_finite())
            .map(|(x, v)| format!("{:.2},{:.2}", px(x), py(v.log10())))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[k % COLORS.len()];
        writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = MARGIN + 12.0 + 14.0 * k as f64;
        let lx = x0 + MARGIN + w - 70.0;
        writeln!(svg, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"/>"#, lx + 15.0).unwrap();
        writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#, lx + 20.0, ly + 3.0, s.name).unwrap();
    }
}

/// Two panels, `e_p` and `e_u` against dimension on a log scale.
pub fn render_svg(series: &[Series]) -> String {
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif" font-size="12">"#,
        2.0 * PANEL_W,
        PANEL_H
    )
    .unwrap();
    panel(&mut svg, 0.0, "e_p", series, |r| r.e_p);
    panel(&mut svg, PANEL_W, "e_u", series, |r| r.e_u);
    svg.push_str("</svg>\n");
    svg
}

/// Writes the table and plot next to the run's convergence tables.
pub fn report(dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let series = load_series(dir)?;
    let table = dir.join(REPORT_TABLE);
    let plot = dir.join(REPORT_PLOT);
    fs::write(&table, format_table(&series)).map_err(|e| CliError::io(&table, e))?;
    fs::write(&plot, render_svg(&series)).map_err(|e| CliError::io(&plot, e))?;
    Ok((table, plot))
}
