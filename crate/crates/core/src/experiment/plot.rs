//! Standalone SVG line and bar charts, plus the small CSV reader that feeds them.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;

/// One plotted point with a symmetric error bar.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub label: String,
    pub y: f64,
    pub err: f64,
}

/// Columns of a header-first comma-separated table.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty table".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(|s| s.trim().to_string()).collect()).collect();
        if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(Error::InvalidInput(format!("row {} has {} fields, header has {}", i + 1, rows[i].len(), header.len())));
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("no column {name}")))
    }

    /// (x label, y, err) triples; `err` defaults to 0.
    pub fn points(&self, x: &str, y: &str, err: Option<&str>) -> Result<Vec<Point>> {
        let (xi, yi) = (self.column(x)?, self.column(y)?);
        let ei = err.map(|e| self.column(e)).transpose()?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {s}")));
        self.rows
            .iter()
            .map(|r| {
                Ok(Point {
                    label: r[xi].clone(),
                    y: num(&r[yi])?,
                    err: ei.map(|i| num(&r[i])).transpose()?.unwrap_or(0.0),
                })
            })
            .collect()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(points: &[Point]) -> Self {
        let lo = points.iter().map(|p| p.y - p.err).fold(f64::INFINITY, f64::min).min(0.0);
        let mut hi = points.iter().map(|p| p.y + p.err).fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        Self { ymin: lo, ymax: hi + 0.05 * (hi - lo) }
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (v - self.ymin) / (self.ymax - self.ymin))
    }
}

fn open(o: &mut String, title: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(o, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let (x0, y0, y1) = (LEFT, H - BOTTOM, TOP);
    let _ = writeln!(o, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, W - RIGHT);
    let _ = writeln!(o, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = f.ymin + (f.ymax - f.ymin) * i as f64 / 4.0;
        let y = f.y(v);
        let _ = writeln!(o, r#"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(o, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(
        o,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
}

fn slot_x(i: usize, n: usize) -> f64 {
    LEFT + (W - LEFT - RIGHT) * (i as f64 + 0.5) / n as f64
}

fn error_bar(o: &mut String, x: f64, f: &Frame, p: &Point) {
    if p.err > 0.0 {
        let (a, b) = (f.y(p.y - p.err), f.y(p.y + p.err));
        let _ = writeln!(o, r#"<line x1="{x:.1}" y1="{a:.1}" x2="{x:.1}" y2="{b:.1}" stroke="black"/>"#);
        for y in [a, b] {
            let _ = writeln!(o, r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black"/>"#, x - 4.0, x + 4.0);
        }
    }
}

fn x_label(o: &mut String, x: f64, label: &str) {
    let _ = writeln!(o, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, esc(label));
}

/// Points joined in order, x positions evenly spaced and labeled.
pub fn line_svg(title: &str, ylabel: &str, points: &[Point]) -> String {
    let f = Frame::new(points);
    let mut o = String::new();
    open(&mut o, title, ylabel, &f);
    let xy: Vec<(f64, f64)> = points.iter().enumerate().map(|(i, p)| (slot_x(i, points.len()), f.y(p.y))).collect();
    let path: Vec<String> = xy.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    let _ = writeln!(o, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, path.join(" "));
    for (p, (x, y)) in points.iter().zip(&xy) {
        error_bar(&mut o, *x, &f, p);
        let _ = writeln!(o, r##"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="#1f77b4"/>"##);
        x_label(&mut o, *x, &p.label);
    }
    o.push_str("</svg>\n");
    o
}

pub fn bar_svg(title: &str, ylabel: &str, points: &[Point]) -> String {
    let f = Frame::new(points);
    let mut o = String::new();
    open(&mut o, title, ylabel, &f);
    let bw = 0.6 * (W - LEFT - RIGHT) / points.len().max(1) as f64;
    for (i, p) in points.iter().enumerate() {
        let x = slot_x(i, points.len());
        let (top, base) = (f.y(p.y.max(0.0)), f.y(p.y.min(0.0)));
        let _ = writeln!(
            o,
            r##"<rect x="{:.1}" y="{top:.1}" width="{bw:.1}" height="{:.1}" fill="#ff7f0e"/>"##,
            x - bw / 2.0,
            base - top
        );
        error_bar(&mut o, x, &f, p);
        x_label(&mut o, x, &p.label);
    }
    o.push_str("</svg>\n");
    o
}

/// Line chart when every label is numeric, bar chart otherwise.
pub fn auto_svg(title: &str, ylabel: &str, points: &[Point]) -> String {
    if !points.is_empty() && points.iter().all(|p| p.label.parse::<f64>().is_ok()) {
        line_svg(title, ylabel, points)
    } else {
        bar_svg(title, ylabel, points)
    }
}
