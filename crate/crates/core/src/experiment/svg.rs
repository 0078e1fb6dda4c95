//! Minimal SVG plots: matched-pair overlays, small multiples and trajectory
//! traces. Every figure carries the config digest in its footer.

use crate::tensor::Tensor;
use std::fmt::Write as _;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x0: f64,
    y0: f64,
    span: f64,
    left: f64,
    top: f64,
    size: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64]>, left: f64, top: f64, size: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !lo[0].is_finite() {
            lo = [-1.0; 2];
            hi = [1.0; 2];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
        Self {
            x0: (lo[0] + hi[0]) / 2.0 - span / 2.0,
            y0: (lo[1] + hi[1]) / 2.0 - span / 2.0,
            span,
            left,
            top,
            size,
        }
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        (
            self.left + (p[0] - self.x0) / self.span * self.size,
            self.top + self.size - (p[1] - self.y0) / self.span * self.size,
        )
    }
}

fn open(w: f64, h: f64, title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, esc(title)).unwrap();
    s
}

fn close(mut s: String, h: f64, digest: &str) -> String {
    writeln!(s, r##"<text x="10" y="{}" font-size="9" fill="#666">config {digest}</text>"##, h - 6.0).unwrap();
    s.push_str("</svg>\n");
    s
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn rows(t: &Tensor) -> impl Iterator<Item = &[f64]> {
    (0..t.rows()).map(move |i| t.row(i))
}

fn dot(s: &mut String, (x, y): (f64, f64), color: &str) {
    writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6" fill="{color}" fill-opacity="0.7"/>"#).unwrap();
}

/// Two aligned point sets with a segment joining each matched pair.
pub fn overlay(title: &str, digest: &str, a: &Tensor, b: &Tensor, names: [&str; 2]) -> String {
    let (w, h) = (520.0, 560.0);
    let f = Frame::fit(rows(a).chain(rows(b)), 20.0, 30.0, 480.0);
    let mut s = open(w, h, title);
    for (pa, pb) in rows(a).zip(rows(b)) {
        let (x1, y1) = f.map(pa);
        let (x2, y2) = f.map(pb);
        writeln!(
            s,
            r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#999" stroke-width="0.4"/>"##
        )
        .unwrap();
    }
    for (set, color) in [(a, COLORS[0]), (b, COLORS[1])] {
        for p in rows(set) {
            dot(&mut s, f.map(p), color);
        }
    }
    for (i, name) in names.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            w - 140.0,
            20.0 + 14.0 * i as f64,
            COLORS[i],
            esc(name)
        )
        .unwrap();
    }
    close(s, h, digest)
}

/// One scatter panel per named set, sharing axes.
pub fn panels(title: &str, digest: &str, sets: &[(String, Tensor)]) -> String {
    let cols = sets.len().clamp(1, 5);
    let nrows = sets.len().div_ceil(cols).max(1);
    let cell = 200.0;
    let (w, h) = (cols as f64 * cell + 20.0, nrows as f64 * (cell + 20.0) + 50.0);
    let shared = Frame::fit(sets.iter().flat_map(|(_, t)| rows(t)), 0.0, 0.0, 1.0);
    let mut s = open(w, h, title);
    for (i, (name, t)) in sets.iter().enumerate() {
        let left = 10.0 + (i % cols) as f64 * cell;
        let top = 40.0 + (i / cols) as f64 * (cell + 20.0);
        let f = Frame {
            left: left + 5.0,
            top: top + 15.0,
            size: cell - 10.0,
            ..shared
        };
        writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#ccc"/>"##,
            f.left, f.top, f.size, f.size
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#, left + 5.0, top + 11.0, esc(name)).unwrap();
        for p in rows(t) {
            dot(&mut s, f.map(p), COLORS[0]);
        }
    }
    close(s, h, digest)
}

/// Polylines of `(steps + 1) × 2` paths, one color per model.
pub fn trajectories(title: &str, digest: &str, sets: &[(String, Vec<Tensor>)]) -> String {
    let (w, h) = (520.0, 560.0);
    let f = Frame::fit(sets.iter().flat_map(|(_, ts)| ts.iter().flat_map(rows)), 20.0, 30.0, 480.0);
    let mut s = open(w, h, title);
    for (k, (name, paths)) in sets.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for path in paths {
            let pts: Vec<String> = rows(path)
                .map(|p| {
                    let (x, y) = f.map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.8" stroke-opacity="0.8"/>"#,
                pts.join(" ")
            )
            .unwrap();
            if let Some(start) = path.data().get(..2) {
                let (x, y) = f.map(start);
                writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="#000"/>"##).unwrap();
            }
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            w - 140.0,
            20.0 + 14.0 * k as f64,
            esc(name)
        )
        .unwrap();
    }
    close(s, h, digest)
}
