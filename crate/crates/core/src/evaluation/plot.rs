use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a minimal static SVG line chart of `points` (x, y), with y on a
/// fixed `[0, 1]` axis.
pub fn write_line_plot_svg(points: &[(f64, f64)], x_label: &str, y_label: &str, path: &Path) -> Result<()> {
    fs::write(path, line_plot_svg(points, x_label, y_label)).map_err(|e| Error::io(path, e))
}

pub(crate) fn line_plot_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let (x0, x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| M + (x - x0) / span * (W - 2.0 * M);
    let py = |y: f64| H - M - y.clamp(0.0, 1.0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = M,
        bottom = H - M,
        right = W - M
    );
    for tick in 0..=4 {
        let y = tick as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, M - 6.0, py(y) + 4.0);
    }
    for &(x, _) in points {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), H - M + 16.0);
    }
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, px(x), py(y));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}
