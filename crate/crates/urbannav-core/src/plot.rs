//! Trajectory figure emission as SVG: the input trajectory, ground-truth
//! actions, predicted actions, and the target, in the current coordinate
//! system with the agent at the origin. Output bytes are a pure function of
//! the input.

use crate::dataset::NavigationSample;
use crate::geometry::Vec2;
use crate::metrics::Prediction;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 48.0;

/// One polyline or point set.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub color: String,
    pub points: Vec<Vec2>,
    /// Draw point markers (always) and connecting lines (when > 1 point).
    pub line: bool,
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub series: Vec<PlotSeries>,
    /// Mark the agent at the origin.
    pub agent_at_origin: bool,
}

/// The standard sample figure: past positions, ground-truth future actions,
/// optional predicted actions, and the target point.
pub fn sample_plot(sample: &NavigationSample, prediction: Option<&Prediction>) -> PlotSpec {
    let mut series = vec![
        PlotSeries {
            label: "input trajectory".to_string(),
            color: "#4878cf".to_string(),
            points: sample.past_positions.clone(),
            line: true,
        },
        PlotSeries {
            label: "ground-truth actions".to_string(),
            color: "#2ca02c".to_string(),
            points: with_origin(&sample.future_actions),
            line: true,
        },
    ];
    if let Some(pred) = prediction {
        series.push(PlotSeries {
            label: "predicted actions".to_string(),
            color: "#d62728".to_string(),
            points: with_origin(&pred.actions),
            line: true,
        });
    }
    series.push(PlotSeries {
        label: "target".to_string(),
        color: "#9467bd".to_string(),
        points: vec![sample.target_position],
        line: false,
    });
    PlotSpec {
        title: format!("{} t={}", sample.trajectory_id, sample.t),
        series,
        agent_at_origin: true,
    }
}

fn with_origin(points: &[Vec2]) -> Vec<Vec2> {
    let mut v = Vec::with_capacity(points.len() + 1);
    v.push(Vec2::ZERO);
    v.extend_from_slice(points);
    v
}

/// Data-space bounding box covering every plotted point (plus the origin
/// when the agent marker is on), padded 10% per side.
pub fn data_bounds(spec: &PlotSpec) -> (Vec2, Vec2) {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut cover = |p: Vec2| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    if spec.agent_at_origin {
        cover(Vec2::ZERO);
    }
    for s in &spec.series {
        for &p in &s.points {
            cover(p);
        }
    }
    if !min.x.is_finite() {
        min = Vec2::new(-1.0, -1.0);
        max = Vec2::new(1.0, 1.0);
    }
    let span_x = (max.x - min.x).max(1e-9);
    let span_y = (max.y - min.y).max(1e-9);
    (
        Vec2::new(min.x - 0.1 * span_x, min.y - 0.1 * span_y),
        Vec2::new(max.x + 0.1 * span_x, max.y + 0.1 * span_y),
    )
}

/// Map a data point into pixel coordinates (y flipped: +y is up).
pub fn to_pixel(p: Vec2, min: Vec2, max: Vec2) -> (f64, f64) {
    let scale = ((WIDTH - 2.0 * MARGIN) / (max.x - min.x))
        .min((HEIGHT - 2.0 * MARGIN) / (max.y - min.y));
    let cx = (min.x + max.x) / 2.0;
    let cy = (min.y + max.y) / 2.0;
    (
        WIDTH / 2.0 + (p.x - cx) * scale,
        HEIGHT / 2.0 - (p.y - cy) * scale,
    )
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Render the figure. Output is deterministic byte-for-byte for identical
/// specs.
pub fn render_svg(spec: &PlotSpec) -> String {
    let (min, max) = data_bounds(spec);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(&spec.title)
    ));

    // Axes through the origin when it is in range.
    let (ox, oy) = to_pixel(Vec2::ZERO, min, max);
    if min.x <= 0.0 && max.x >= 0.0 {
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n",
            fmt(ox), fmt(MARGIN), fmt(ox), fmt(HEIGHT - MARGIN)
        ));
    }
    if min.y <= 0.0 && max.y >= 0.0 {
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n",
            fmt(MARGIN), fmt(oy), fmt(WIDTH - MARGIN), fmt(oy)
        ));
    }

    for s in &spec.series {
        if s.line && s.points.len() > 1 {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&p| {
                    let (x, y) = to_pixel(p, min, max);
                    format!("{},{}", fmt(x), fmt(y))
                })
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                pts.join(" "),
                s.color
            ));
        }
        for &p in &s.points {
            let (x, y) = to_pixel(p, min, max);
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                fmt(x),
                fmt(y),
                s.color
            ));
        }
    }

    if spec.agent_at_origin {
        out.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"6\" fill=\"none\" stroke=\"#222222\" stroke-width=\"2\"/>\n",
            fmt(ox),
            fmt(oy)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">agent</text>\n",
            fmt(ox + 9.0),
            fmt(oy - 9.0)
        ));
    }

    // Legend.
    let mut ly = 44.0;
    for s in &spec.series {
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            fmt(MARGIN),
            fmt(ly),
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
            fmt(MARGIN + 18.0),
            fmt(ly + 10.0),
            xml_escape(&s.label)
        ));
        ly += 18.0;
    }

    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
