use serde::{Deserialize, Serialize};

use crate::raster::{GrayImage, RgbImage};

use super::flow::FlowField;
use super::stagnation::StagnationReport;
use super::FlowVizError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Stamp radius of the streamline polylines, pixels.
    pub line_radius: u32,
    /// Zone ring radius is the zone's widest sample radius plus this.
    pub ring_margin: f64,
    pub ring_color: [u8; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            line_radius: 1,
            ring_margin: 3.0,
            ring_color: [255, 255, 0],
        }
    }
}

/// Blue (`t = 0`) to red (`t = 1`).
pub fn velocity_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64| (255.0 * x + 0.5).floor() as u8;
    [c(t), 0, c(1.0 - t)]
}

/// Velocity-coded overlay: stagnation rings first, then each edge's
/// polyline (node, samples, node) colored by a linear map of its sample
/// velocities from `[v_min, v_max]` to blue..red. A single-valued range
/// renders the palette midpoint.
pub fn render_streamlines(
    base: &GrayImage,
    field: &FlowField,
    report: &StagnationReport,
    opts: &RenderOptions,
) -> Result<RgbImage, FlowVizError> {
    if base.dimensions() != (field.width, field.height) {
        return Err(FlowVizError::DimensionMismatch {
            base: base.dimensions(),
            field: (field.width, field.height),
        });
    }
    let mut out = base.to_rgb();
    let (vmin, vmax) = field.velocity_range().ok_or(FlowVizError::EmptyField)?;
    let to_t = |v: f64| if vmax > vmin { (v - vmin) / (vmax - vmin) } else { 0.5 };

    for zone in &report.zones {
        draw_ring(&mut out, zone.centroid, zone.max_radius + opts.ring_margin, opts.ring_color);
    }

    for edge in &field.edges {
        if edge.samples.is_empty() {
            continue;
        }
        let mut pts: Vec<([f64; 2], f64)> = Vec::with_capacity(edge.samples.len() + 2);
        pts.push((field.nodes[edge.from], edge.samples[0].v));
        pts.extend(edge.samples.iter().map(|s| ([s.x, s.y], s.v)));
        pts.push((field.nodes[edge.to], edge.samples[edge.samples.len() - 1].v));
        for pair in pts.windows(2) {
            let (p, vp) = pair[0];
            let (q, vq) = pair[1];
            let steps = (q[0] - p[0]).abs().max((q[1] - p[1]).abs()).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let f = k as f64 / steps as f64;
                let v = if f < 0.5 { vp } else { vq };
                let x = p[0] + f * (q[0] - p[0]);
                let y = p[1] + f * (q[1] - p[1]);
                stamp(&mut out, x, y, opts.line_radius, velocity_color(to_t(v)));
            }
        }
    }
    Ok(out)
}

fn stamp(img: &mut RgbImage, x: f64, y: f64, radius: u32, rgb: [u8; 3]) {
    let (cx, cy) = ((x + 0.5).floor() as i64, (y + 0.5).floor() as i64);
    let r = radius as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (px, py) = (cx + dx, cy + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.set(px as u32, py as u32, rgb);
            }
        }
    }
}

fn draw_ring(img: &mut RgbImage, center: [f64; 2], radius: f64, rgb: [u8; 3]) {
    let reach = (radius + 1.0).ceil() as i64;
    let (cx, cy) = (center[0].round() as i64, center[1].round() as i64);
    for py in cy - reach..=cy + reach {
        for px in cx - reach..=cx + reach {
            if px < 0 || py < 0 || px as u32 >= img.width() || py as u32 >= img.height() {
                continue;
            }
            let d = (px as f64 - center[0]).hypot(py as f64 - center[1]);
            if (d - radius).abs() <= 0.5 {
                img.set(px as u32, py as u32, rgb);
            }
        }
    }
}
