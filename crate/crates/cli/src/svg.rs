//! Minimal SVG scatter/trajectory plots for two-dimensional latents.

use std::fmt::Write;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<[f64; 2]>,
    /// Draw as a connected trajectory rather than loose markers.
    pub line: bool,
}

impl Series {
    pub fn path(
        label: impl Into<String>,
        color: &'static str,
        latents: &[impl AsRef<[f64]>],
    ) -> Self {
        Self {
            label: label.into(),
            color,
            points: latents
                .iter()
                .map(|x| [x.as_ref()[0], x.as_ref()[1]])
                .collect(),
            line: true,
        }
    }

    pub fn markers(
        label: impl Into<String>,
        color: &'static str,
        points: &[impl AsRef<[f64]>],
    ) -> Self {
        Self {
            line: false,
            ..Self::path(label, color, points)
        }
    }
}

pub const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

pub fn scatter(title: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let w = (hi - lo).max(1e-9);
        (lo - 0.05 * w, hi + 0.05 * w)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| SIZE - MARGIN - (y - y0) / (y1 - y0) * span;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="#888"/>"##
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        MARGIN / 2.0 + 5.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="10">x: [{x0:.3}, {x1:.3}]  y: [{y0:.3}, {y1:.3}]</text>"#,
        SIZE - MARGIN / 3.0
    )
    .unwrap();
    for s in series {
        if s.line && s.points.len() > 1 {
            let coords: Vec<String> = s
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1])))
                .collect();
            writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2" opacity="0.8"/>"#,
                coords.join(" "),
                s.color
            )
            .unwrap();
        }
        let markers: &[[f64; 2]] = if s.line {
            s.points.last().map(std::slice::from_ref).unwrap_or(&[])
        } else {
            &s.points
        };
        for p in markers {
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                px(p[0]),
                py(p[1]),
                s.color
            )
            .unwrap();
        }
    }
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * i as f64;
        writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="4" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            MARGIN + 10.0,
            y - 4.0,
            s.color,
            MARGIN + 18.0,
            y,
            escape(&s.label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
