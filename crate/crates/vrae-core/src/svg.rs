//! Minimal static SVG emission for the two report plots: the quality/FPS
//! scatter with its front polyline, and the per-block entropy curves.
//! Output strings are deterministic; an optional timestamp comment is the
//! only non-reproducible piece and is injected by the caller.

use crate::analysis::{pareto_flags, EntropyProfile, ParetoPoint, QualityMetric};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 56.0;

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    fn of(values: impl Iterator<Item = f64>) -> Axis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return Axis { min: 0.0, max: 1.0 };
        }
        if min == max {
            // Widen a degenerate range so the point sits mid-plot.
            min -= 0.5;
            max += 0.5;
        }
        let pad = (max - min) * 0.06;
        Axis { min: min - pad, max: max + pad }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.min) / (self.max - self.min) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.min) / (self.max - self.min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, timestamp: Option<&str>) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    if let Some(ts) = timestamp {
        out.push_str(&format!("<!-- generated {ts} -->\n"));
    }
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
}

fn axes(out: &mut String, x_label: &str, y_label: &str, xa: &Axis, ya: &Axis) {
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (x1, y1) = (WIDTH - MARGIN, MARGIN);
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_label}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    for (v, label_x) in [(xa.min, true), (xa.max, true)] {
        let _ = label_x;
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{v:.2}</text>\n",
            xa.x(v),
            HEIGHT - MARGIN + 16.0
        ));
    }
    for v in [ya.min, ya.max] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{v:.2}</text>\n",
            MARGIN - 6.0,
            ya.y(v) + 4.0
        ));
    }
}

/// Fig.-3-style scatter: every model as a labeled point, the Pareto front
/// joined by a red polyline (fps-descending order).
pub fn pareto_svg(
    points: &[ParetoPoint],
    metric: QualityMetric,
    timestamp: Option<&str>,
) -> String {
    let flags = pareto_flags(points, metric);
    let xa = Axis::of(points.iter().map(|p| p.fps));
    let ya = Axis::of(points.iter().map(|p| p.quality));
    let mut out = String::new();
    svg_open(&mut out, timestamp);
    axes(&mut out, "fps", metric.as_str(), &xa, &ya);

    let mut front: Vec<&ParetoPoint> =
        points.iter().zip(&flags).filter(|(_, &f)| f).map(|(p, _)| p).collect();
    front.sort_by(|a, b| b.fps.total_cmp(&a.fps));
    if front.len() > 1 {
        let path: Vec<String> = front
            .iter()
            .map(|p| format!("{:.1},{:.1}", xa.x(p.fps), ya.y(p.quality)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
    }
    for (p, &on_front) in points.iter().zip(&flags) {
        let (cx, cy) = (xa.x(p.fps), ya.y(p.quality));
        let fill = if on_front { "red" } else { "steelblue" };
        out.push_str(&format!(
            "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"4\" fill=\"{fill}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\">{}</text>\n",
            cx + 6.0,
            cy - 5.0,
            p.label
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Fig.-2-style curves: average entropy change per encoder block, one
/// polyline per model.
pub fn entropy_svg(profiles: &[EntropyProfile], timestamp: Option<&str>) -> String {
    let max_blocks = profiles.iter().map(|p| p.per_block.len()).max().unwrap_or(1);
    let xa = Axis { min: 0.6, max: max_blocks as f64 + 0.4 };
    let ya = Axis::of(profiles.iter().flat_map(|p| p.per_block.iter().copied()));
    let mut out = String::new();
    svg_open(&mut out, timestamp);
    axes(&mut out, "encoder block", "avg entropy change (nats)", &xa, &ya);
    let colors = ["crimson", "steelblue", "seagreen", "darkorange"];
    for (i, profile) in profiles.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = profile
            .per_block
            .iter()
            .enumerate()
            .map(|(b, &v)| format!("{:.1},{:.1}", xa.x((b + 1) as f64), ya.y(v)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        for (b, &v) in profile.per_block.iter().enumerate() {
            out.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                xa.x((b + 1) as f64),
                ya.y(v)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN - 70.0,
            MARGIN + 16.0 * (i as f64 + 1.0),
            profile.model
        ));
    }
    out.push_str("</svg>\n");
    out
}
