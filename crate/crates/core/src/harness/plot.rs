//! Plain-text SVG line charts of metrics series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_metrics, HarnessError, COLUMNS};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One polyline: a label and (step, value) points.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    (0..)
        .map(|i| first + i as f64 * step)
        .take_while(|v| *v <= hi + step * 1e-9)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders series as an SVG document. With `log_y`, values are plotted as
/// log10 and non-positive values are dropped.
pub fn render_svg(series: &[PlotSeries], y_label: &str, log_y: bool) -> Result<String, HarnessError> {
    let tf = |v: f64| if log_y { v.log10() } else { v };
    let lines: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, tf(y)))
                .collect();
            (s.label.clone(), pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = lines.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        return Err(HarnessError::Plot(format!("no data for `{y_label}`")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = all.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let y_ticks = if log_y {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
        (y0 as i64..=y1 as i64).map(|e| e as f64).collect::<Vec<_>>()
    } else {
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
        nice_ticks(y0, y1, 6)
    };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for t in nice_ticks(x0, x1, 6) {
        let x = px(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0,
            fmt_tick(t)
        );
    }
    for t in y_ticks {
        let y = py(t);
        let label = if log_y { format!("1e{}", t as i64) } else { fmt_tick(t) };
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            LEFT - 5.0,
            LEFT + pw,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    );
    let y_title = if log_y { format!("{y_label} (log10)") } else { y_label.to_string() };
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{y_title}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Reads `column` from each metrics file (optionally only rows of `split`)
/// and writes one chart with a polyline per file, labelled by file stem.
pub fn emit_plot(
    files: &[PathBuf],
    column: &str,
    split: Option<&str>,
    log_y: bool,
    out: &Path,
) -> Result<(), HarnessError> {
    if !COLUMNS.contains(&column) || matches!(column, "step" | "split") {
        return Err(HarnessError::Plot(format!("`{column}` is not a numeric metrics column")));
    }
    if files.is_empty() {
        return Err(HarnessError::Plot("no metrics files given".into()));
    }
    let mut series = Vec::new();
    for f in files {
        let m = read_metrics(f)?;
        let points: Vec<(f64, f64)> = m
            .records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .filter_map(|r| r.get(column).map(|v| (r.step as f64, v)))
            .collect();
        if points.is_empty() {
            return Err(HarnessError::Plot(format!(
                "{} has no values in column `{column}`",
                f.display()
            )));
        }
        let label = f
            .parent()
            .and_then(|p| p.file_name())
            .filter(|_| f.file_stem().is_some_and(|s| s == "metrics"))
            .or_else(|| f.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        series.push(PlotSeries { label, points });
    }
    let svg = render_svg(&series, column, log_y)?;
    fs::write(out, svg).map_err(|e| HarnessError::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })
}
