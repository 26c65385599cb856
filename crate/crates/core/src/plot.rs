//! Standalone SVG renderings of [`PlotData`]: forest, funnel and
//! standardized-residual plots.
//!
//! Output depends only on the input values: fixed 800×600 canvas, fixed
//! font size, coordinates printed with two decimals, elements in data order.

use std::fmt::Write as _;

use crate::meta::{PlotData, RowKind};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const FONT: &str = "font-family=\"monospace\" font-size=\"12\"";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Linear map from a data interval onto a pixel interval.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo {
            let pad = (hi - lo) * 0.05;
            (lo - pad, hi + pad)
        } else {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            (lo - pad, hi + pad)
        };
        Self {
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    fn px(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

struct Svg {
    buf: String,
}

impl Svg {
    fn new(title: &str, metadata: Option<&str>) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        if let Some(m) = metadata {
            let _ = writeln!(buf, "<metadata>{}</metadata>", esc(m));
        }
        let _ = writeln!(
            buf,
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
        );
        let _ = writeln!(
            buf,
            "<text x=\"{:.2}\" y=\"24.00\" {FONT} font-weight=\"bold\" text-anchor=\"middle\">{}</text>",
            WIDTH / 2.0,
            esc(title)
        );
        Self { buf }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(
            self.buf,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" {style}/>"
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.buf,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" {FONT} text-anchor=\"{anchor}\">{}</text>",
            esc(s)
        );
    }

    fn raw(&mut self, s: String) {
        self.buf.push_str(&s);
        self.buf.push('\n');
    }

    fn x_axis(&mut self, axis: &Axis, y: f64, label: &str) {
        self.line(axis.px_lo, y, axis.px_hi, y, "stroke=\"black\"");
        for t in axis.ticks(4) {
            let x = axis.px(t);
            self.line(x, y, x, y + 5.0, "stroke=\"black\"");
            self.text(x, y + 18.0, "middle", &fmt_tick(t));
        }
        self.text((axis.px_lo + axis.px_hi) / 2.0, y + 36.0, "middle", label);
    }

    fn y_axis(&mut self, axis: &Axis, x: f64, label: &str) {
        self.line(x, axis.px_lo, x, axis.px_hi, "stroke=\"black\"");
        for t in axis.ticks(4) {
            let y = axis.px(t);
            self.line(x - 5.0, y, x, y, "stroke=\"black\"");
            self.text(x - 8.0, y + 4.0, "end", &fmt_tick(t));
        }
        self.raw(format!(
            "<text x=\"20.00\" y=\"{:.2}\" {FONT} text-anchor=\"middle\" transform=\"rotate(-90 20.00 {:.2})\">{}</text>",
            (axis.px_lo + axis.px_hi) / 2.0,
            (axis.px_lo + axis.px_hi) / 2.0,
            esc(label)
        ));
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

/// One line per study (square sized by common weight, CI whisker) followed
/// by diamonds for the common and random summaries.
pub fn forest_svg(data: &PlotData, metadata: Option<&str>) -> String {
    let mut svg = Svg::new(
        &format!("Forest plot ({:.0}% CI)", data.ci_level * 100.0),
        metadata,
    );
    let lo = data
        .forest_rows
        .iter()
        .map(|r| r.ci_low)
        .fold(f64::INFINITY, f64::min);
    let hi = data
        .forest_rows
        .iter()
        .map(|r| r.ci_high)
        .fold(f64::NEG_INFINITY, f64::max);
    let x = Axis::new(lo, hi, 210.0, 530.0);
    let n = data.forest_rows.len().max(1) as f64;
    let top = 60.0;
    let bottom = HEIGHT - 70.0;
    let dy = (bottom - top) / n;

    svg.text(10.0, top - 10.0, "start", "Study");
    svg.text(545.0, top - 10.0, "start", "Estimate [CI]");
    svg.text(705.0, top - 10.0, "start", "W(c)/W(r) %");

    let max_w = data
        .study_rows()
        .map(|r| r.weight_common)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for (i, r) in data.forest_rows.iter().enumerate() {
        let y = top + dy * (i as f64 + 0.5);
        svg.text(10.0, y + 4.0, "start", &r.study_id);
        svg.text(
            545.0,
            y + 4.0,
            "start",
            &format!(
                "{} [{}; {}]",
                fmt_tick(r.effect),
                fmt_tick(r.ci_low),
                fmt_tick(r.ci_high)
            ),
        );
        let (cx, l, h) = (x.px(r.effect), x.px(r.ci_low), x.px(r.ci_high));
        match r.kind {
            RowKind::Study => {
                svg.text(
                    705.0,
                    y + 4.0,
                    "start",
                    &format!(
                        "{:.1}/{:.1}",
                        r.weight_common * 100.0,
                        r.weight_random * 100.0
                    ),
                );
                svg.line(l, y, h, y, "stroke=\"black\"");
                let side = 4.0 + 10.0 * (r.weight_common / max_w).sqrt();
                svg.raw(format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{side:.2}\" height=\"{side:.2}\" fill=\"grey\"/>",
                    cx - side / 2.0,
                    y - side / 2.0
                ));
            }
            RowKind::Common | RowKind::Random => {
                let fill = if r.kind == RowKind::Common {
                    "steelblue"
                } else {
                    "firebrick"
                };
                let half = (dy * 0.35).min(8.0);
                svg.raw(format!(
                    "<polygon points=\"{l:.2},{y:.2} {cx:.2},{:.2} {h:.2},{y:.2} {cx:.2},{:.2}\" fill=\"{fill}\"/>",
                    y - half,
                    y + half
                ));
            }
        }
    }
    if let Some(common) = data.forest_rows.iter().find(|r| r.kind == RowKind::Common) {
        let cx = x.px(common.effect);
        svg.line(
            cx,
            top,
            cx,
            bottom,
            "stroke=\"steelblue\" stroke-dasharray=\"4 3\"",
        );
    }
    svg.x_axis(&x, bottom + 5.0, "effect");
    svg.finish()
}

/// Effect against standard error, standard error increasing downwards, with
/// the pseudo-confidence funnel around the common-effect estimate.
pub fn funnel_svg(data: &PlotData, metadata: Option<&str>) -> String {
    let mut svg = Svg::new("Funnel plot", metadata);
    let pooled = data
        .forest_rows
        .iter()
        .find(|r| r.kind == RowKind::Common)
        .map_or(0.0, |r| r.effect);
    let max_se = data
        .funnel_points
        .iter()
        .map(|p| p.standard_error)
        .fold(0.0f64, f64::max);
    let z = 1.959963984540054;
    let lo = data
        .funnel_points
        .iter()
        .map(|p| p.effect)
        .fold(pooled - z * max_se, f64::min);
    let hi = data
        .funnel_points
        .iter()
        .map(|p| p.effect)
        .fold(pooled + z * max_se, f64::max);
    let x = Axis::new(lo, hi, 100.0, 760.0);
    let y = Axis::new(0.0, max_se, 60.0, 520.0);

    svg.raw(format!(
        "<polyline points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"none\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>",
        x.px(pooled - z * max_se),
        y.px(max_se),
        x.px(pooled),
        y.px(0.0),
        x.px(pooled + z * max_se),
        y.px(max_se)
    ));
    svg.line(
        x.px(pooled),
        y.px(0.0),
        x.px(pooled),
        y.px(max_se),
        "stroke=\"steelblue\"",
    );
    for p in &data.funnel_points {
        svg.raw(format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4.00\" fill=\"black\"/>",
            x.px(p.effect),
            y.px(p.standard_error)
        ));
    }
    svg.x_axis(&x, 530.0, "effect");
    svg.y_axis(&y, 95.0, "standard error");
    svg.finish()
}

/// Standardized residual per study, with reference lines at 0 and ±1.96.
pub fn residual_svg(data: &PlotData, metadata: Option<&str>) -> String {
    let mut svg = Svg::new("Standardized residuals", metadata);
    let lim = data
        .residuals
        .iter()
        .map(|r| r.abs())
        .fold(2.5f64, f64::max);
    let y = Axis::new(-lim, lim, 520.0, 60.0);
    let n = data.residuals.len().max(1);
    let x = Axis::new(1.0, n as f64, 100.0, 760.0);
    for level in [-1.96, 0.0, 1.96] {
        let style = if level == 0.0 {
            "stroke=\"black\""
        } else {
            "stroke=\"grey\" stroke-dasharray=\"4 3\""
        };
        svg.line(100.0, y.px(level), 760.0, y.px(level), style);
    }
    let ids: Vec<&str> = data.study_rows().map(|r| r.study_id.as_str()).collect();
    for (i, r) in data.residuals.iter().enumerate() {
        let cx = x.px((i + 1) as f64);
        svg.line(cx, y.px(0.0), cx, y.px(*r), "stroke=\"grey\"");
        svg.raw(format!(
            "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"4.00\" fill=\"black\"/>",
            y.px(*r)
        ));
        if let Some(id) = ids.get(i) {
            svg.raw(format!(
                "<text x=\"{cx:.2}\" y=\"545.00\" {FONT} text-anchor=\"end\" transform=\"rotate(-45 {cx:.2} 545.00)\">{}</text>",
                esc(id)
            ));
        }
    }
    svg.y_axis(&y, 95.0, "standardized residual");
    svg.finish()
}
