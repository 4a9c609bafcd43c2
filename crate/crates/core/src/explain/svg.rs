//! Deterministic SVG documents: no randomness, no timestamps, fixed float
//! formatting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::features::{assign_neighbors, Category};
use crate::labeler::{segment_events, ManeuverLabel};
use crate::trajdata::{FrameIndex, LaneGeometry, Scene, VehicleId};

use super::{ContributionReport, ExplainError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneView {
    /// Road shown ahead of and behind the target, meters.
    pub half_length_m: f64,
    pub px_per_m: f64,
}

impl Default for SceneView {
    fn default() -> Self {
        Self {
            half_length_m: 80.0,
            px_per_m: 5.0,
        }
    }
}

/// Two decimals, never `-0.00`.
fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn label_color(l: ManeuverLabel) -> &'static str {
    match l {
        ManeuverLabel::L => "#3b7dd8",
        ManeuverLabel::F => "#c8c8c8",
        ManeuverLabel::R => "#e67e22",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Centerline points between arc lengths `a` and `b`.
fn polyline_between(lane: &LaneGeometry, a: f64, b: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut s = 0.0;
    for w in lane.centerline.windows(2) {
        let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        let at = |t: f64| [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
        let (lo, hi) = (a.max(s), b.min(s + len));
        if lo <= hi {
            if out.is_empty() {
                out.push(at((lo - s) / len));
            }
            out.push(at((hi - s) / len));
        }
        s += len;
    }
    out
}

struct Frame2 {
    x0: f64,
    y1: f64,
    k: f64,
    margin: f64,
}

impl Frame2 {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.x0) * self.k + self.margin, (self.y1 - y) * self.k + self.margin)
    }

    fn points(&self, pts: &[[f64; 2]]) -> String {
        pts.iter()
            .map(|p| {
                let (x, y) = self.px(p[0], p[1]);
                format!("{},{}", f(x), f(y))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Top-down diagram of the road around `target` at `frame`, with optional
/// contribution bars and class probabilities.
pub fn render_scene(
    scene: &Scene,
    frame: FrameIndex,
    target: VehicleId,
    report: Option<&ContributionReport>,
    probs: Option<[f64; 3]>,
    view: &SceneView,
) -> String {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for lane in scene.lanes() {
        for p in &lane.centerline {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1] - lane.width / 2.0);
            ymax = ymax.max(p[1] + lane.width / 2.0);
        }
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    let me = scene.frame(target, frame).copied();
    if let Some(t) = me {
        xmin = t.x - view.half_length_m;
        xmax = t.x + view.half_length_m;
    }
    let fr = Frame2 {
        x0: xmin,
        y1: ymax,
        k: view.px_per_m,
        margin: 20.0,
    };
    let road_h = (ymax - ymin) * fr.k + 2.0 * fr.margin;
    let bars_h = if report.is_some() { 140.0 } else { 0.0 };
    let text_h = if probs.is_some() { 24.0 } else { 0.0 };
    let width = (xmax - xmin) * fr.k + 2.0 * fr.margin;
    let height = road_h + bars_h + text_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        f(width),
        f(height),
        f(width),
        f(height)
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<clipPath id="road"><rect x="0" y="0" width="{}" height="{}"/></clipPath>"#, f(width), f(road_h));
    let _ = writeln!(s, r#"<g clip-path="url(#road)">"#);
    for lane in scene.lanes() {
        let _ = writeln!(
            s,
            r##"<polyline class="lane" data-lane="{}" points="{}" fill="none" stroke="#d9d9d9" stroke-width="{}"/>"##,
            lane.lane_id,
            fr.points(&lane.centerline),
            f(lane.width * fr.k * 0.96)
        );
        if let Some(r) = &lane.ramp {
            let _ = writeln!(
                s,
                r##"<polyline class="ramp" data-lane="{}" points="{}" fill="none" stroke="#f3d9a4" stroke-width="{}"/>"##,
                lane.lane_id,
                fr.points(&polyline_between(lane, r.s_start, r.s_end)),
                f(lane.width * fr.k * 0.96)
            );
        }
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#ffffff" stroke-width="1" stroke-dasharray="8 8"/>"##,
            fr.points(&lane.centerline)
        );
    }
    if let Some(t) = me {
        let nb = assign_neighbors(scene, target, frame).ok();
        let neighbor_ids: Vec<VehicleId> = nb
            .map(|n| [n.pv, n.rv, n.plv_l, n.pfv_l, n.plv_r, n.pfv_r].into_iter().flatten().collect())
            .unwrap_or_default();
        for v in scene.vehicles_at(frame) {
            if (v.x - t.x).abs() > view.half_length_m + 5.0 {
                continue;
            }
            let (role, color) = if v.vehicle_id == target {
                ("target", "#2ca02c")
            } else if neighbor_ids.contains(&v.vehicle_id) {
                ("neighbor", "#ff7f0e")
            } else {
                ("other", "#7f7f7f")
            };
            let (cx, cy) = fr.px(v.x, v.y);
            let (w, h) = (4.5 * fr.k, 1.8 * fr.k);
            let _ = writeln!(
                s,
                r#"<rect class="vehicle {role}" data-id="{}" x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
                v.vehicle_id,
                f(cx - w / 2.0),
                f(cy - h / 2.0),
                f(w),
                f(h)
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if let Some(r) = report {
        let max = Category::ALL.iter().map(|&c| r.value(c).abs()).fold(0.0, f64::max);
        let base = road_h + 70.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">frame {} predicted {}</text>"#,
            f(fr.margin),
            f(road_h + 14.0),
            r.frame_index,
            r.predicted
        );
        for (i, &c) in Category::ALL.iter().enumerate() {
            let v = r.value(c);
            let h = if max > 0.0 { 50.0 * v.abs() / max } else { 0.0 };
            let x = fr.margin + 20.0 + i as f64 * 70.0;
            let y = if v >= 0.0 { base - h } else { base };
            let color = if v >= 0.0 { "#2e8b57" } else { "#c0392b" };
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-category="{}" data-value="{v:e}" x="{}" y="{}" width="40" height="{}" fill="{color}"/>"#,
                c.name(),
                f(x),
                f(y),
                f(h)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                f(x + 20.0),
                f(base + 66.0),
                c.name()
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#000000" stroke-width="1"/>"##,
            f(fr.margin + 10.0),
            f(base),
            f(fr.margin + 20.0 + 5.0 * 70.0),
            f(base)
        );
    }
    if let Some(p) = probs {
        let _ = writeln!(
            s,
            r#"<text class="probs" x="{}" y="{}" font-family="sans-serif" font-size="12">L {:.3}  F {:.3}  R {:.3}</text>"#,
            f(fr.margin),
            f(height - 8.0),
            p[0],
            p[1],
            p[2]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One strip of class-colored segments per method plus a ground-truth strip
/// at the bottom.
pub fn render_timeline(
    scene: &Scene,
    target: VehicleId,
    first_frame: FrameIndex,
    methods: &[(String, Vec<ManeuverLabel>)],
    truth: &[ManeuverLabel],
) -> Result<String, ExplainError> {
    for (name, m) in methods {
        if m.len() != truth.len() {
            return Err(ExplainError::Alignment {
                name: name.clone(),
                len: m.len(),
                expected: truth.len(),
            });
        }
    }
    let n = truth.len().max(1) as f64;
    let (left, strip_w, strip_h, gap) = (120.0, 800.0, 18.0, 8.0);
    let ppf = strip_w / n;
    let mut strips: Vec<(&str, &[ManeuverLabel])> = methods.iter().map(|(n, l)| (n.as_str(), l.as_slice())).collect();
    strips.push(("ground truth", truth));
    let height = 30.0 + strips.len() as f64 * (strip_h + gap) + 30.0;
    let width = left + strip_w + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        f(width),
        f(height),
        f(width),
        f(height)
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="13">vehicle {target}</text>"#,
        f(left)
    );
    for (row, (name, labels)) in strips.iter().enumerate() {
        let y = 30.0 + row as f64 * (strip_h + gap);
        let _ = writeln!(s, r#"<g class="strip" data-name="{}">"#, escape(name));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            f(left - 8.0),
            f(y + 13.0),
            escape(name)
        );
        for e in segment_events(labels, first_frame) {
            let x = left + (e.start_frame - first_frame) as f64 * ppf;
            let _ = writeln!(
                s,
                r#"<rect class="segment" data-label="{}" data-start="{}" data-end="{}" x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                e.label,
                e.start_frame,
                e.end_frame,
                f(x),
                f(y),
                f(e.len() as f64 * ppf),
                f(strip_h),
                label_color(e.label)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    // one tick per second
    let rate = scene.sample_rate_hz();
    let axis_y = 30.0 + strips.len() as f64 * (strip_h + gap) + 4.0;
    let seconds = (truth.len() as f64 / rate).floor() as usize;
    for k in 0..=seconds {
        let x = left + k as f64 * rate * ppf;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#000000" stroke-width="1"/>"##,
            f(axis_y),
            f(axis_y + 5.0),
            x = f(x)
        );
        if k % 5 == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{k} s</text>"#,
                f(x),
                f(axis_y + 16.0)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
