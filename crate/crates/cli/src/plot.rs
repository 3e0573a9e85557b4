//! Static SVG line plots of CSV columns.

use std::fmt::Write as _;
use std::path::Path;

use isogauss_core::table::{parse_f64, Table};

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn numeric_column(table: &Table, name: &str) -> Result<Vec<f64>> {
    let i = table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    Ok(table
        .rows
        .iter()
        .map(|r| parse_f64(&r[i]).unwrap_or(f64::NAN))
        .collect())
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One polyline per column against `x` (the first column when `None`).
///
/// Point coordinates are written in a y-up frame, so a falling series has
/// falling y values in the markup. Long series are thinned to every k-th row
/// plus the last.
pub fn render_svg(table: &Table, x: Option<&str>, columns: &[&str]) -> Result<String> {
    let x_name = match x {
        Some(name) => name,
        None => table
            .header
            .first()
            .ok_or_else(|| Error::MissingColumn("<first column>".into()))?,
    };
    let xs = numeric_column(table, x_name)?;
    let series = columns
        .iter()
        .map(|c| numeric_column(table, c))
        .collect::<Result<Vec<_>>>()?;
    let (x0, x1) = span(xs.iter().copied());
    let (y0, y1) = span(series.iter().flatten().copied());
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let stride = xs.len().div_ceil(MAX_POINTS).max(1);
    let keep = |i: usize| i.is_multiple_of(stride) || i + 1 == xs.len();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g transform="translate({MARGIN} {}) scale(1 -1)">"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for (k, ys) in series.iter().enumerate() {
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .enumerate()
            .filter(|&(i, (a, b))| keep(i) && a.is_finite() && b.is_finite())
            .map(|(_, (a, b))| format!("{:.4},{:.4}", (a - x0) / (x1 - x0) * pw, (b - y0) / (y1 - y0) * ph))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            columns[k],
            COLORS[k % COLORS.len()],
            points.join(" ")
        );
    }
    let _ = writeln!(svg, "</g>");
    let text = |svg: &mut String, x: f64, y: f64, anchor: &str, s: &str| {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{s}</text>"#
        );
    };
    text(&mut svg, MARGIN - 4.0, HEIGHT - MARGIN, "end", &format!("{y0:.4e}"));
    text(&mut svg, MARGIN - 4.0, MARGIN + 8.0, "end", &format!("{y1:.4e}"));
    text(&mut svg, MARGIN, HEIGHT - MARGIN + 16.0, "start", &format!("{x0:.4e}"));
    text(
        &mut svg,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        "end",
        &format!("{x1:.4e}"),
    );
    text(&mut svg, WIDTH / 2.0, HEIGHT - 12.0, "middle", x_name);
    for (k, c) in columns.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{}">{c}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 + 14.0 * k as f64,
            COLORS[k % COLORS.len()]
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(csv: &Path, x: Option<&str>, columns: &[&str], out: &Path) -> Result<()> {
    let file = std::fs::File::open(csv).map_err(|e| Error::io(csv, e))?;
    let table = Table::read_from(file)?;
    let svg = render_svg(&table, x, columns)?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

/// The `(x, y)` points of each polyline, in document order.
pub fn polyline_points(svg: &str) -> Vec<Vec<(f64, f64)>> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .map(|l| {
            let start = l.find("points=\"").map_or(l.len(), |i| i + 8);
            let body = &l[start..];
            let body = &body[..body.find('"').unwrap_or(body.len())];
            body.split_whitespace()
                .filter_map(|p| {
                    let (a, b) = p.split_once(',')?;
                    Some((a.parse().ok()?, b.parse().ok()?))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let mut t = Table::new(&["t", "a", "b"]);
        for i in 0..5 {
            let x = i as f64;
            t.push_numbers(&[x, x * x, -x]);
        }
        t
    }

    #[test]
    fn endpoints_fill_the_frame() {
        let svg = render_svg(&table(), None, &["a", "b"]).unwrap();
        let lines = polyline_points(&svg);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].len(), 5);
        assert_eq!(lines[0][0].0, 0.0);
        assert_eq!(lines[0][4], (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN));
        assert_eq!(lines[1][4].1, 0.0);
    }

    #[test]
    fn long_series_are_thinned() {
        let mut t = Table::new(&["t", "y"]);
        for i in 0..5001 {
            t.push_numbers(&[i as f64, i as f64]);
        }
        let pts = &polyline_points(&render_svg(&t, None, &["y"]).unwrap())[0];
        assert!(pts.len() <= MAX_POINTS + 1);
        assert_eq!(pts.last().unwrap().0, WIDTH - 2.0 * MARGIN);
    }

    #[test]
    fn missing_column_is_named() {
        let err = render_svg(&table(), None, &["a", "nope"]).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "nope"));
    }
}
