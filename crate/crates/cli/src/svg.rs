//! Bare line plots: axes, tick labels and one polyline per series.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series<'a> {
    pub name: String,
    pub points: &'a [(f64, f64)],
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let finite = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 < x1) {
        (x0, x1) = (x0.min(0.0) - 0.5, x1.max(0.0) + 0.5);
    }
    if !(y0 < y1) {
        (y0, y1) = (y0.min(0.0) - 0.5, y1.max(0.0) + 0.5);
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    writeln!(out, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"##).unwrap();
    writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##).unwrap();
    writeln!(out, r##"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"##, WIDTH / 2.0, escape(title)).unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(out, r##"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"##).unwrap();
    if y0 < 0.0 && y1 > 0.0 {
        writeln!(out, r##"<line x1="{left}" y1="{0:.2}" x2="{right}" y2="{0:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##, sy(0.0)).unwrap();
    }
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(out, r##"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"##, sx(xv), bottom + 15.0, tick(xv)).unwrap();
        writeln!(out, r##"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"##, left - 4.0, sy(yv) + 4.0, tick(yv)).unwrap();
    }
    writeln!(out, r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##, WIDTH / 2.0, HEIGHT - 10.0, escape(x_label)).unwrap();
    writeln!(out, r##"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"##, HEIGHT / 2.0, HEIGHT / 2.0, escape(y_label)).unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(out, r##"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.2"/>"##, path.join(" ")).unwrap();
        let ly = top + 14.0 * i as f64;
        writeln!(out, r##"<text x="{}" y="{ly}" fill="{color}">{}</text>"##, right - 90.0, escape(&s.name)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
