//! Minimal deterministic SVG charts: scatter with overlaid lines, and histograms.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const SURVEY: &str = "#b0b0b0";
const BOUNDARY: &str = "#1f5fbf";
const MARK: &str = "#c0392b";

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-9 {
            return Range { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Range { lo: lo - pad, hi: hi + pad }
    }

    fn include_zero(self) -> Range {
        Range {
            lo: self.lo.min(0.0),
            hi: self.hi.max(0.0),
        }
    }

    /// Tick positions at a 1-2-5 step giving at most about eight ticks.
    fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 8.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

struct Frame {
    x: Range,
    y: Range,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.2} {y1:.2}V{y0:.2}H{x1:.2}" fill="none" stroke="black"/>"#
    );
    for t in f.x.ticks() {
        let x = f.px(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            tick_label(t)
        );
    }
    for t in f.y.ticks() {
        let y = f.py(t);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Description-space scatter: gray survey dots, black subsystem circles and
/// blue optimized boundaries.
#[derive(Debug, Clone, Default)]
pub struct ScatterChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub survey: Vec<(f64, f64)>,
    pub subsystems: Vec<(f64, f64)>,
    pub boundaries: Vec<Vec<(f64, f64)>>,
}

impl ScatterChart {
    pub fn render(&self) -> String {
        let all = || {
            self.survey
                .iter()
                .chain(&self.subsystems)
                .chain(self.boundaries.iter().flatten())
        };
        let f = Frame {
            x: Range::of(all().map(|p| p.0)).include_zero(),
            y: Range::of(all().map(|p| p.1)).include_zero(),
        };
        let mut out = String::new();
        open(&mut out, &self.title);
        axes(&mut out, &f, &self.x_label, &self.y_label);
        for &(x, y) in self.survey.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{SURVEY}"/>"#,
                f.px(x),
                f.py(y)
            );
        }
        for line in &self.boundaries {
            let mut pts: Vec<(f64, f64)> = line.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pts.is_empty() {
                continue;
            }
            let d: Vec<String> = pts
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| format!("{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, f.px(x), f.py(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{BOUNDARY}" stroke-width="2"/>"#,
                d.join("")
            );
        }
        for &(x, y) in self.subsystems.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="black" stroke-width="1.5"/>"#,
                f.px(x),
                f.py(y)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Histogram of `(bin lower edge, count)` with optional vertical marks.
#[derive(Debug, Clone, Default)]
pub struct HistogramChart {
    pub title: String,
    pub x_label: String,
    pub bin_width: f64,
    pub bins: Vec<(f64, usize)>,
    pub marks: Vec<f64>,
}

impl HistogramChart {
    pub fn render(&self) -> String {
        let edges = self
            .bins
            .iter()
            .flat_map(|&(lo, _)| [lo, lo + self.bin_width])
            .chain(self.marks.iter().copied());
        let top = self.bins.iter().map(|b| b.1).max().unwrap_or(1).max(1) as f64;
        let f = Frame {
            x: Range::of(edges),
            y: Range { lo: 0.0, hi: top * 1.05 },
        };
        let mut out = String::new();
        open(&mut out, &self.title);
        axes(&mut out, &f, &self.x_label, "count");
        for &(lo, c) in &self.bins {
            let (x0, x1) = (f.px(lo), f.px(lo + self.bin_width));
            let (y0, y1) = (f.py(0.0), f.py(c as f64));
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{SURVEY}" stroke="white" stroke-width="0.5"/>"#,
                (x1 - x0).max(0.5),
                y0 - y1
            );
        }
        for &m in self.marks.iter().filter(|m| m.is_finite()) {
            let x = f.px(m);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{MARK}" stroke-width="2"/>"#,
                f.py(0.0),
                f.py(f.y.hi)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}
