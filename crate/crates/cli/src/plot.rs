//! Minimal SVG line charts drawn from the run's CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(xv), b + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, py(yv) + 4.0, tick(yv));
        let _ = writeln!(s, r##"<line x1="{l}" x2="{r}" y1="{0:.1}" y2="{0:.1}" stroke="#ddd"/>"##, py(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        H / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" stroke-width="1.5" fill="none"/>"#, pts.join(" "));
        let ly = t + 8.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, r - 110.0, r - 90.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, r - 84.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Reads columns `x` and `y` of a CSV file, one series per distinct value of
/// `group` (or a single series named after `y`).
pub fn series_from_csv(path: &Path, x: &str, y: &str, group: Option<&str>) -> CliResult<Vec<Series>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Runtime(format!("{} has no column {name}", path.display())))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let gi = group.map(col).transpose()?;
    let mut groups: BTreeMap<(u64, String), Vec<(f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        let label = gi.map_or_else(|| y.to_string(), |g| format!("{} = {}", group.unwrap_or_default(), &rec[g]));
        // numeric group values sort numerically
        let key = gi.map_or(0, |g| rec[g].parse::<f64>().map_or(u64::MAX, |v| v.to_bits()));
        groups.entry((key, label)).or_default().push((num(xi), num(yi)));
    }
    Ok(groups.into_iter().map(|((_, label), points)| Series { label, points }).collect())
}

/// Renders `svg` from `csv`, reporting but never propagating failures.
pub fn emit(csv: &Path, svg: &Path, title: &str, x: &str, y: &str, group: Option<&str>) -> bool {
    let out = series_from_csv(csv, x, y, group).and_then(|s| {
        std::fs::write(svg, render(title, x, y, &s))?;
        Ok(())
    });
    match out {
        Ok(()) => true,
        Err(e) => {
            eprintln!("warning: plot {} not written: {e}", svg.display());
            false
        }
    }
}
