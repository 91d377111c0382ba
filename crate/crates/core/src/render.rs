//! SVG rendering of per-element mesh fields.
//!
//! Panels share one symmetric diverging color range so magnitudes stay
//! comparable across modes. Output is plain SVG text with fixed-precision
//! coordinates, so renders are diffable and byte-identical for identical
//! inputs.

use std::fmt::Write;

use nalgebra::DVector;

use crate::mesh::Mesh;
use crate::{Error, Result};

/// Panel layout and color scale for one render.
#[derive(Debug, Clone)]
pub struct RenderSpec {
    /// Symmetric value bound of the diverging color map, shared by all panels.
    pub color_range: f64,
    /// Pixel size of each square panel.
    pub panel_size: u32,
    /// 1-based mode numbers used for panel captions.
    pub panel_modes: Vec<usize>,
}

/// Largest absolute value across the fields; the natural shared color range.
pub fn symmetric_range(fields: &[DVector<f64>]) -> f64 {
    fields
        .iter()
        .map(|f| f.amax())
        .fold(0.0f64, f64::max)
}

/// Diverging blue-white-red map over `[-range, range]`.
fn diverging_color(value: f64, range: f64) -> String {
    let t = ((value / range) + 1.0) / 2.0;
    let t = t.clamp(0.0, 1.0);
    let (lo, mid, hi) = ((33.0, 102.0, 172.0), (247.0, 247.0, 247.0), (178.0, 24.0, 43.0));
    let lerp = |a: f64, b: f64, s: f64| a + (b - a) * s;
    let (r, g, b) = if t < 0.5 {
        let s = t * 2.0;
        (lerp(lo.0, mid.0, s), lerp(lo.1, mid.1, s), lerp(lo.2, mid.2, s))
    } else {
        let s = (t - 0.5) * 2.0;
        (lerp(mid.0, hi.0, s), lerp(mid.1, hi.1, s), lerp(mid.2, hi.2, s))
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Renders one filled-triangle panel per field, side by side.
///
/// Each field must hold one value per mesh element.
pub fn render_mesh_fields(
    mesh: &Mesh,
    fields: &[(String, DVector<f64>)],
    spec: &RenderSpec,
) -> Result<String> {
    if fields.is_empty() {
        return Err(Error::InvalidParameter("nothing to render".into()));
    }
    if !(spec.color_range > 0.0) {
        return Err(Error::InvalidParameter("color_range must be positive".into()));
    }
    for (name, f) in fields {
        if f.len() != mesh.element_count() {
            return Err(Error::Dimension(format!(
                "field {name} has {} values, mesh has {} elements",
                f.len(),
                mesh.element_count()
            )));
        }
    }
    let size = spec.panel_size as f64;
    let margin = size * 0.05;
    let caption_h = size * 0.12;
    let total_w = size * fields.len() as f64;
    let total_h = size + caption_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0}" height="{total_h:.0}" viewBox="0 0 {total_w:.0} {total_h:.0}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{total_w:.0}" height="{total_h:.0}" fill="white"/>"#).unwrap();

    let scale = (size - 2.0 * margin) / (2.0 * mesh.radius);
    for (panel, (name, field)) in fields.iter().enumerate() {
        let x0 = panel as f64 * size + size / 2.0;
        let y0 = size / 2.0;
        let px = |p: [f64; 2]| (x0 + p[0] * scale, y0 - p[1] * scale);
        writeln!(svg, r#"<g id="panel-{panel}">"#).unwrap();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let pts: Vec<String> = tri
                .iter()
                .map(|&v| {
                    let (x, y) = px(mesh.nodes[v]);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let fill = diverging_color(field[t], spec.color_range);
            writeln!(
                svg,
                r#"<polygon points="{}" fill="{fill}" stroke="{fill}" stroke-width="0.3"/>"#,
                pts.join(" ")
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<circle cx="{x0:.2}" cy="{y0:.2}" r="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
            mesh.radius * scale
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{x0:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="{:.0}">{name}</text>"#,
            size + caption_h * 0.7,
            caption_h * 0.5
        )
        .unwrap();
        writeln!(svg, "</g>").unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    Ok(svg)
}
