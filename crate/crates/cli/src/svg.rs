//! Minimal SVG plotter: stacked line panels and bar charts.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, xs: &[f64], ys: &[f64]) -> Self {
        Self {
            label: label.into(),
            points: xs.iter().copied().zip(ys.iter().copied()).collect(),
        }
    }
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Axis range padded to "nice" tick boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Axis {
    lo: f64,
    hi: f64,
    step: f64,
}

impl Axis {
    fn fit(lo: f64, hi: f64) -> Self {
        let (lo, hi) = if !(lo.is_finite() && hi.is_finite()) {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        };
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 2.5, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|&s| s >= raw)
            .unwrap_or(10.0 * mag);
        Self {
            lo: (lo / step).floor() * step,
            hi: (hi / step).ceil() * step,
            step,
        }
    }

    fn ticks(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }

    fn map(&self, x: f64, a: f64, b: f64) -> f64 {
        a + (x - self.lo) / (self.hi - self.lo) * (b - a)
    }
}

fn tick_label(x: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize + 1 };
    let s = format!("{x:.decimals$}");
    if s == "-0" { "0".into() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

#[allow(clippy::too_many_arguments)]
fn frame(out: &mut String, x0: f64, y0: f64, w: f64, h: f64, xa: Option<&Axis>, ya: &Axis, panel: &Panel) {
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    for (xa, t) in xa.into_iter().flat_map(|a| a.ticks().into_iter().map(move |t| (a, t))) {
        let x = xa.map(t, x0, x0 + w);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, y0 + h);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + h + 15.0,
            tick_label(t, xa.step)
        );
    }
    for t in ya.ticks() {
        let y = ya.map(t, y0 + h, y0);
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, x0 + w);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            y + 4.0,
            tick_label(t, ya.step)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-weight="bold">{}</text>"#,
        x0 + w / 2.0,
        y0 - 10.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        y0 + h + 32.0,
        escape(&panel.x_label)
    );
    let (lx, ly) = (x0 - 50.0, y0 + h / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
        escape(&panel.y_label)
    );
}

fn bounds(points: impl Iterator<Item = f64>) -> (f64, f64) {
    points
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Panels stacked vertically, each with its own axes and legend.
pub fn line_chart(panels: &[Panel], width: f64, panel_height: f64) -> String {
    let height = panels.len() as f64 * panel_height;
    let mut out = String::new();
    header(&mut out, width, height);
    for (p, panel) in panels.iter().enumerate() {
        let all = || panel.series.iter().flat_map(|s| s.points.iter());
        let (xlo, xhi) = bounds(all().map(|p| p.0));
        let (ylo, yhi) = bounds(all().map(|p| p.1));
        let (xa, ya) = (Axis::fit(xlo, xhi), Axis::fit(ylo, yhi));
        let x0 = MARGIN_L;
        let y0 = p as f64 * panel_height + MARGIN_T;
        let w = width - MARGIN_L - MARGIN_R;
        let h = panel_height - MARGIN_T - MARGIN_B;
        frame(&mut out, x0, y0, w, h, Some(&xa), &ya, panel);
        for (i, s) in panel.series.iter().enumerate() {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", xa.map(x, x0, x0 + w), ya.map(y, y0 + h, y0)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
        let legend = r##"fill="white" fill-opacity="0.8" stroke="#aaa""##;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="125" height="{:.2}" {legend}/>"#,
            x0 + w - 127.0,
            y0 + 2.0,
            14.0 * panel.series.len() as f64 + 6.0
        );
        for (i, s) in panel.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let ly = y0 + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                x0 + w - 120.0,
                ly - 4.0,
                x0 + w - 100.0,
                ly - 4.0
            );
            let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, x0 + w - 95.0, escape(&s.label));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with their values printed on top.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let width = (MARGIN_L + MARGIN_R + 90.0 * bars.len().max(1) as f64).max(360.0);
    let height = 360.0;
    let mut out = String::new();
    header(&mut out, width, height);
    let (_, hi) = bounds(bars.iter().map(|b| b.1));
    let ya = Axis::fit(0.0, hi.max(0.0));
    let x0 = MARGIN_L;
    let y0 = MARGIN_T;
    let w = width - MARGIN_L - MARGIN_R;
    let h = height - MARGIN_T - MARGIN_B;
    let panel = Panel {
        title: title.into(),
        x_label: String::new(),
        y_label: y_label.into(),
        series: Vec::new(),
    };
    frame(&mut out, x0, y0, w, h, None, &ya, &panel);
    let slot = w / bars.len().max(1) as f64;
    for (i, (label, value)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let top = ya.map(*value, y0 + h, y0);
        let bx = x0 + slot * i as f64 + slot * 0.2;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            slot * 0.6,
            (y0 + h - top).max(0.0)
        );
        let cx = bx + slot * 0.3;
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{value:.1}</text>"#, top - 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + h + 15.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
