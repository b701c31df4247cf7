//! Minimal static SVG charts: line plots with shaded bands, and box plots.

use std::fmt::Write as _;

use crate::stats::Summary;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone)]
pub struct Line {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Band {
    pub name: String,
    /// `(x, low, high)`
    pub points: Vec<(f64, f64, f64)>,
    pub color: String,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Scale {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Scale {
        let finite = |it: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
            it.filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (mut x0, mut x1) = finite(&mut xs.clone());
        let (mut y0, mut y1) = finite(&mut ys.clone());
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        let pad = ((y1 - y0) * 0.05).max(1e-6);
        Scale { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, sc: &Scale, x_label: &str, y_label: &str, x_ticks: bool) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=5 {
        let y = sc.y0 + (sc.y1 - sc.y0) * k as f64 / 5.0;
        let py = sc.py(y);
        let _ = writeln!(out, r##"<line x1="{l}" y1="{py:.1}" x2="{r}" y2="{py:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 5.0, py + 4.0, fmt_tick(y));
        if x_ticks {
            let x = sc.x0 + (sc.x1 - sc.x0) * k as f64 / 5.0;
            let px = sc.px(x);
            let _ = writeln!(out, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, b + 16.0, fmt_tick(x));
        }
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let xs = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.0))
            .chain(self.bands.iter().flat_map(|b| b.points.iter().map(|p| p.0)))
            .collect::<Vec<_>>();
        let ys = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter().map(|p| p.1))
            .chain(self.bands.iter().flat_map(|b| b.points.iter().flat_map(|p| [p.1, p.2])))
            .collect::<Vec<_>>();
        let sc = Scale::fit(xs.iter().copied(), ys.iter().copied());
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &sc, &self.x_label, &self.y_label, true);
        for b in &self.bands {
            if b.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (i, (x, _, hi)) in b.points.iter().enumerate() {
                let _ = write!(d, "{}{:.1},{:.1} ", if i == 0 { "M" } else { "L" }, sc.px(*x), sc.py(*hi));
            }
            for (x, lo, _) in b.points.iter().rev() {
                let _ = write!(d, "L{:.1},{:.1} ", sc.px(*x), sc.py(*lo));
            }
            let _ = writeln!(out, r#"<path d="{}Z" fill="{}" fill-opacity="0.25" stroke="none"/>"#, d, b.color);
        }
        for l in &self.lines {
            let mut d = String::new();
            let mut pen_up = true;
            for (x, y) in &l.points {
                if !y.is_finite() {
                    pen_up = true;
                    continue;
                }
                let _ = write!(d, "{}{:.1},{:.1} ", if pen_up { "M" } else { "L" }, sc.px(*x), sc.py(*y));
                pen_up = false;
            }
            let dash = if l.dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.2"{dash}/>"#, l.color);
        }
        let legend: Vec<(&str, &str)> = self
            .bands
            .iter()
            .map(|b| (b.name.as_str(), b.color.as_str()))
            .chain(self.lines.iter().map(|l| (l.name.as_str(), l.color.as_str())))
            .collect();
        for (i, (name, color)) in legend.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="10" fill="{color}"/>"#, LEFT + 10.0, y - 9.0);
            let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, LEFT + 27.0, escape(name));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Box plot (quartiles, whiskers at min/max) of each group.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let ys = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect::<Vec<_>>();
    let sc = Scale::fit([0.0, groups.len().max(1) as f64].into_iter(), ys.iter().copied());
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &sc, "", y_label, false);
    let slot = (WIDTH - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(30.0);
        if let Some(s) = Summary::of(values) {
            let (q1, q3) = (sc.py(s.q1), sc.py(s.q3));
            let _ = writeln!(out, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#, sc.py(s.min), sc.py(s.max));
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{q3:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
                cx - half,
                2.0 * half,
                (q1 - q3).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{m:.1}" x2="{:.1}" y2="{m:.1}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                cx + half,
                m = sc.py(s.median)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="end" transform="rotate(-30 {cx:.1} {:.1})">{}</text>"#,
            HEIGHT - BOTTOM + 14.0,
            HEIGHT - BOTTOM + 14.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
