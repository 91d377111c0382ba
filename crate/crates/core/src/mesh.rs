//! Triangulated disk meshes and boundary electrode layouts.
//!
//! The disk is meshed with a structured polar-ring triangulation: a center
//! node, `rings` concentric rings of `boundary_segments` nodes each, and a
//! fan of triangles between consecutive rings. The construction is fully
//! deterministic, so identical parameters always produce bit-identical
//! meshes.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default contact impedance in model units (conductivity normalized to 1).
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 0.01;

/// 2D triangulated disk.
///
/// Triangles are counterclockwise; `boundary` lists the outermost ring of
/// node indices counterclockwise starting at angle 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub radius: f64,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<usize>,
}

impl Mesh {
    /// Number of triangular elements, `M`.
    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Signed area of a triangle (positive for counterclockwise orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Centroid of a triangle.
    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        [
            (pa[0] + pb[0] + pc[0]) / 3.0,
            (pa[1] + pb[1] + pc[1]) / 3.0,
        ]
    }

    /// Total area of all elements.
    pub fn total_area(&self) -> f64 {
        (0..self.element_count()).map(|t| self.signed_area(t)).sum()
    }

    /// Checks every structural invariant; used by tests and after file loads.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut referenced = vec![false; n];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::InvalidParameter(format!(
                        "triangle {t} references node {v} out of {n}"
                    )));
                }
                referenced[v] = true;
            }
            if self.signed_area(t) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "triangle {t} has non-positive area"
                )));
            }
        }
        if referenced.iter().any(|&r| !r) {
            return Err(Error::InvalidParameter("mesh contains orphan nodes".into()));
        }
        let tol = 1e-9 * self.radius;
        for &b in &self.boundary {
            let p = self.nodes[b];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if (r - self.radius).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "boundary node {b} is off the circle by {:.3e}",
                    (r - self.radius).abs()
                )));
            }
        }
        Ok(())
    }
}

/// Electrodes on the disk boundary: center angles, a common arc half-width,
/// and one contact impedance per electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    /// Center angle of each electrode in radians, sorted counterclockwise in `[0, 2π)`.
    pub centers: Vec<f64>,
    /// Arc half-width of every electrode in radians.
    pub arc_half_width: f64,
    /// Contact impedance per electrode, model units.
    pub contact_impedance: Vec<f64>,
}

impl ElectrodeLayout {
    pub fn electrode_count(&self) -> usize {
        self.centers.len()
    }

    /// Short identifier derived from the layout geometry, used to stamp artifacts.
    pub fn id(&self) -> String {
        crate::io::short_hash(&serde_json::to_vec(self).expect("layout serializes"))
    }
}

/// Default electrode arc half-width for a slot ring: electrodes cover half
/// of their slot pitch.
pub fn default_arc_half_width(slot_count: usize) -> f64 {
    PI / (2.0 * slot_count as f64)
}

/// Builds the structured polar-ring disk mesh.
///
/// `boundary_segments` is the node count of every ring; `interior_density`
/// scales the ring count (1.0 gives roughly unit-aspect elements).
pub fn build_disk_mesh(radius: f64, boundary_segments: usize, interior_density: f64) -> Result<Mesh> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    if boundary_segments < 16 {
        return Err(Error::InvalidParameter(format!(
            "boundary_segments must be at least 16, got {boundary_segments}"
        )));
    }
    if !(interior_density > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "interior_density must be positive, got {interior_density}"
        )));
    }
    let nb = boundary_segments;
    let rings = ((interior_density * nb as f64 / (2.0 * PI)).ceil() as usize).max(2);

    let mut nodes = Vec::with_capacity(1 + nb * rings);
    nodes.push([0.0, 0.0]);
    for j in 1..=rings {
        let r = radius * j as f64 / rings as f64;
        for k in 0..nb {
            let theta = 2.0 * PI * k as f64 / nb as f64;
            nodes.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    let node = |ring: usize, k: usize| 1 + (ring - 1) * nb + (k % nb);

    let mut triangles = Vec::with_capacity(nb * (2 * rings - 1));
    for k in 0..nb {
        triangles.push([0, node(1, k), node(1, k + 1)]);
    }
    for j in 1..rings {
        for k in 0..nb {
            let i0 = node(j, k);
            let i1 = node(j, k + 1);
            let o0 = node(j + 1, k);
            let o1 = node(j + 1, k + 1);
            triangles.push([i0, o0, o1]);
            triangles.push([i0, o1, i1]);
        }
    }

    let boundary: Vec<usize> = (0..nb).map(|k| node(rings, k)).collect();
    let mesh = Mesh { radius, nodes, triangles, boundary };
    mesh.validate()?;
    Ok(mesh)
}

/// Builds an [`ElectrodeLayout`] from a ring of `slot_count` evenly spaced
/// slots with the given subset selected.
pub fn layout_from_slots(
    slot_count: usize,
    selected: &BTreeSet<usize>,
    electrode_arc: f64,
) -> Result<ElectrodeLayout> {
    if slot_count == 0 {
        return Err(Error::InvalidParameter("slot_count must be positive".into()));
    }
    if let Some(&bad) = selected.iter().find(|&&s| s >= slot_count) {
        return Err(Error::InvalidParameter(format!(
            "selected slot {bad} out of range 0..{slot_count}"
        )));
    }
    if selected.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "at least 4 electrodes required, got {}",
            selected.len()
        )));
    }
    if !(electrode_arc > 0.0) {
        return Err(Error::InvalidParameter("electrode_arc must be positive".into()));
    }
    let pitch = 2.0 * PI / slot_count as f64;
    // Disjointness: the closest selected slots are at least one pitch apart.
    let mut sorted: Vec<usize> = selected.iter().copied().collect();
    sorted.sort_unstable();
    for w in 0..sorted.len() {
        let a = sorted[w];
        let b = sorted[(w + 1) % sorted.len()];
        let gap = if w + 1 == sorted.len() {
            (b + slot_count - a) as f64 * pitch
        } else {
            (b - a) as f64 * pitch
        };
        if 2.0 * electrode_arc >= gap {
            return Err(Error::InvalidParameter(format!(
                "electrode arcs overlap: slots {a} and {b} are {gap:.4} rad apart, arcs span {:.4}",
                2.0 * electrode_arc
            )));
        }
    }
    let centers: Vec<f64> = sorted.iter().map(|&k| k as f64 * pitch).collect();
    let n = centers.len();
    Ok(ElectrodeLayout {
        centers,
        arc_half_width: electrode_arc,
        contact_impedance: vec![DEFAULT_CONTACT_IMPEDANCE; n],
    })
}
