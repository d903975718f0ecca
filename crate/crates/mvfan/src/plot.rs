//! Bird's-eye-view SVG plots: radar points, ground truth in green,
//! predictions in red.

use std::fmt::Write as _;

use mvfan_core::head::Detection;
use mvfan_core::projection::GridSpec;
use mvfan_core::{Box3D, RadarFrame};

/// Pixels per meter.
const SCALE: f64 = 12.0;

/// Renders one frame over the BEV grid extent. Forward (+x) points up and
/// +y points left, as seen from above the vehicle.
pub fn bev_svg(frame: &RadarFrame, detections: &[Detection], grid: &GridSpec) -> String {
    let (x0, x1) = (grid.axes[0].min, grid.axes[0].max);
    let (y0, y1) = (grid.axes[1].min, grid.axes[1].max);
    let width = (y1 - y0) * SCALE;
    let height = (x1 - x0) * SCALE;
    let px = |x: f64, y: f64| ((y1 - y) * SCALE, (x1 - x) * SCALE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, "<title>{}</title>", escape(&frame.frame_id));
    for p in &frame.points {
        let (u, v) = px(p.x, p.y);
        let _ = writeln!(s, r##"<circle cx="{u:.2}" cy="{v:.2}" r="2" fill="#404040"/>"##);
    }
    let polygon = |s: &mut String, b: &Box3D, color: &str, extra: &str| {
        let pts: Vec<String> = b
            .bev_corners()
            .iter()
            .map(|c| {
                let (u, v) = px(c[0], c[1]);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>"#,
            pts.join(" ")
        );
        // Heading tick from the center to the front edge.
        let (cu, cv) = px(b.cx, b.cy);
        let (fu, fv) = px(b.cx + 0.5 * b.l * b.yaw.cos(), b.cy + 0.5 * b.l * b.yaw.sin());
        let _ = writeln!(
            s,
            r#"<line x1="{cu:.2}" y1="{cv:.2}" x2="{fu:.2}" y2="{fv:.2}" stroke="{color}" stroke-width="1.5"/>"#
        );
    };
    for b in &frame.boxes {
        polygon(&mut s, b, "#00a000", "");
    }
    for d in detections {
        polygon(&mut s, &d.box3d, "#d00000", &format!(r#" stroke-opacity="{:.3}""#, d.score.clamp(0.2, 1.0)));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
