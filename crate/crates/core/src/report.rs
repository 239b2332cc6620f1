//! CSV output and minimal SVG line plots.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{FpldError, Result};
use crate::sim::{PointSummary, ResultRow};

fn io_err(path: &Path, e: std::io::Error) -> FpldError {
    FpldError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv_to<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| FpldError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_csv_to(BufWriter::new(f), rows)
}

pub fn read_rows_from<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(FpldError::from)).collect()
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    read_rows_from(File::open(path).map_err(|e| io_err(path, e))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, y, half-width of the error bar)`.
    pub points: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#17becf", "#ff7f0e", "#2ca02c", "#d62728", "#7f7f7f"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot with a log10 y axis. Non-positive y values are dropped.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1 > 0.0 && p.1.is_finite());
    let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        let lo = if p.1 > p.2 { p.1 - p.2 } else { p.1 };
        (a.min(lo.log10()), b.max((p.1 + p.2).log10()))
    });
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let (l, r, t, b) = PAD;
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (W - l - r);
    let sy = |y: f64| H - b - (y.log10() - y0) / (y1 - y0) * (H - t - b);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<path d="M{l},{t}V{}H{}" fill="none" stroke="black"/>"#, H - b, W - r);
    for e in y0 as i32..=y1 as i32 {
        let y = sy(10f64.powi(e));
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.1}" x2="{l}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#,
            l - 4.0,
            l - 6.0,
            y + 4.0
        );
    }
    let mut xs: Vec<f64> = pts().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.1}" y1="{}" x2="{px:.1}" y2="{}" stroke="black"/><text x="{px:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            H - b,
            H - b + 4.0,
            H - b + 18.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        H / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let mut d = String::new();
        for p in ser.points.iter().filter(|p| p.1 > 0.0 && p.1.is_finite()) {
            let _ = write!(d, "{}{:.1},{:.1}", if d.is_empty() { "M" } else { "L" }, sx(p.0), sy(p.1));
            if p.2 > 0.0 && p.1 > p.2 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#,
                    sy(p.1 - p.2),
                    sy(p.1 + p.2),
                    x = sx(p.0)
                );
            }
        }
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#);
        let ly = t + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{}" y="{}">{}</text>"#,
            W - r - 150.0,
            W - r - 125.0,
            W - r - 120.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One plot per sweep name: mean KL per policy with stderr bars, plus the
/// bound curves where the rows carry them.
pub fn plot_summaries(title: &str, summaries: &[PointSummary]) -> Vec<(String, String)> {
    let mut names: Vec<&str> = summaries.iter().map(|s| s.sweep_name.as_str()).collect();
    let mut seen = Vec::new();
    names.retain(|n| {
        let fresh = !seen.contains(n);
        seen.push(n);
        fresh
    });
    names
        .into_iter()
        .map(|name| {
            let pts: Vec<&PointSummary> = summaries.iter().filter(|s| s.sweep_name == name).collect();
            let mut policies: Vec<&str> = Vec::new();
            for p in &pts {
                if !policies.contains(&p.policy.as_str()) {
                    policies.push(&p.policy);
                }
            }
            let mut series = Vec::new();
            for pol in &policies {
                let of = |f: &dyn Fn(&PointSummary) -> Option<(f64, f64)>| -> Vec<(f64, f64, f64)> {
                    pts.iter()
                        .filter(|p| p.policy == *pol)
                        .filter_map(|p| f(p).map(|(y, e)| (p.sweep_value, y, e)))
                        .collect()
                };
                series.push(Series {
                    label: format!("{pol} KL"),
                    points: of(&|p| Some((p.mean, p.stderr))),
                    dashed: false,
                });
                let upper = of(&|p| p.upper_bound.map(|u| (u, 0.0)));
                if !upper.is_empty() {
                    series.push(Series { label: format!("{pol} upper"), points: upper, dashed: true });
                }
                let lower = of(&|p| p.lower_bound.map(|u| (u, 0.0)));
                if !lower.is_empty() {
                    series.push(Series { label: format!("{pol} lower"), points: lower, dashed: true });
                }
            }
            (name.to_string(), svg_plot(&format!("{title}: {name} sweep"), name, "KL", &series))
        })
        .collect()
}
