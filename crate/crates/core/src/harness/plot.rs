//! Minimal line charts written as standalone SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::table::NumericTable;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// One panel of a figure, by column names.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub title: String,
    pub x_column: String,
    pub y_column: String,
    pub log_y: bool,
}

impl PanelSpec {
    pub fn new(title: &str, x_column: &str, y_column: &str, log_y: bool) -> Self {
        Self {
            title: title.into(),
            x_column: x_column.into(),
            y_column: y_column.into(),
            log_y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub output: PathBuf,
    pub panels: Vec<PanelSpec>,
    /// `(legend label, CSV file)`
    pub series: Vec<(String, PathBuf)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        format!("{}", (v * 1e3).round() / 1e3)
    }
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64) {
    let (x0, y0) = (ox + MARGIN_L, MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        x0 + w / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        x0 + w / 2.0,
        PANEL_H - 10.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 14.0,
        y0 + h / 2.0,
        ox + 14.0,
        y0 + h / 2.0,
        escape(&panel.y_label)
    );

    let ty = |v: f64| if panel.log_y { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = panel
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!panel.log_y || *y > 0.0))
                .map(|&(x, y)| (x, ty(y)))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" fill="#666">no positive values</text>"##,
            x0 + w / 2.0,
            y0 + h / 2.0
        );
        return;
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if panel.log_y {
        ymin = ymin.floor();
        ymax = ymax.ceil();
        if ymax <= ymin {
            ymax = ymin + 1.0;
        }
    } else if ymax <= ymin {
        ymin -= 0.5;
        ymax += 0.5;
    } else {
        let pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;
    }
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * w;
    let sy = |y: f64| y0 + h - (y - ymin) / (ymax - ymin) * h;

    for t in linear_ticks(xmin, xmax) {
        let _ = writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#333"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle" font-size="10">{4}</text>"##,
            sx(t),
            y0 + h,
            y0 + h + 4.0,
            y0 + h + 16.0,
            tick_label(t)
        );
    }
    let yticks: Vec<f64> = if panel.log_y {
        let span = (ymax - ymin) as usize;
        let stride = span.div_ceil(8).max(1);
        (0..=span).step_by(stride).map(|k| ymin + k as f64).collect()
    } else {
        linear_ticks(ymin, ymax)
    };
    for t in yticks {
        let label = if panel.log_y { format!("1e{}", t as i64) } else { tick_label(t) };
        let _ = writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#ddd"/><text x="{3:.1}" y="{4:.1}" text-anchor="end" font-size="10">{5}</text>"##,
            x0,
            sy(t),
            x0 + w,
            x0 - 4.0,
            sy(t) + 3.0,
            label
        );
    }

    for (k, (series, points)) in panel.series.iter().zip(&pts).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if !points.is_empty() {
            let coords: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = y0 + 14.0 + 14.0 * k as f64;
        let lx = x0 + w - 110.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            ly - 3.0,
            lx + 18.0,
            ly - 3.0,
            lx + 22.0,
            ly,
            escape(&series.label)
        );
    }
}

/// Panels side by side in one SVG document.
pub fn render_svg(panels: &[Panel]) -> Result<String> {
    if panels.is_empty() || panels.iter().all(|p| p.series.iter().all(|s| s.points.is_empty())) {
        return Err(Error::EmptySeries("figure".into()));
    }
    let width = PANEL_W * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, PANEL_W * i as f64);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Reads each series' CSV once and renders the figure to `spec.output`.
pub fn emit_plots(spec: &FigureSpec) -> Result<PathBuf> {
    if spec.series.is_empty() {
        return Err(Error::EmptySeries(spec.output.display().to_string()));
    }
    let tables = spec
        .series
        .iter()
        .map(|(label, path)| {
            let table = NumericTable::read(path)?;
            if table.rows.is_empty() {
                return Err(Error::EmptySeries(path.display().to_string()));
            }
            Ok((label.clone(), path.clone(), table))
        })
        .collect::<Result<Vec<_>>>()?;
    let panels = spec
        .panels
        .iter()
        .map(|ps| {
            let series = tables
                .iter()
                .map(|(label, path, table)| {
                    let missing = |c: &str| Error::Parse {
                        path: path.display().to_string(),
                        line: 1,
                        message: format!("missing column `{c}`"),
                    };
                    let xs = table.column(&ps.x_column).ok_or_else(|| missing(&ps.x_column))?;
                    let ys = table.column(&ps.y_column).ok_or_else(|| missing(&ps.y_column))?;
                    Ok(Series {
                        label: label.clone(),
                        points: xs.into_iter().zip(ys).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Panel {
                title: ps.title.clone(),
                x_label: ps.x_column.clone(),
                y_label: ps.y_column.clone(),
                log_y: ps.log_y,
                series,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&panels)?;
    crate::harness::write_atomic(&spec.output, svg.as_bytes())?;
    Ok(spec.output.clone())
}

pub fn is_svg(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "svg")
}
