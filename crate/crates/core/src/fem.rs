//! Complete electrode model forward solver and adjoint Jacobian.
//!
//! Potentials use a linear (P1) nodal basis on the triangles; electrode
//! potentials are extra unknowns coupled to boundary nodes through the
//! contact impedance terms. The contact admittance of each boundary edge is
//! scaled by the conductivity of its adjoining element, which keeps every
//! measurement exactly degree −1 homogeneous in the conductivity vector
//! (doubling σ halves d, and `Σ_k J_ik σ_k = −d_i` holds to rounding). At
//! the homogeneous unit background this coincides with the standard model.
//!
//! The gauge is fixed by a rank-one penalty on the sum of electrode
//! potentials, so every solution has zero-mean electrode potentials without
//! preferring one electrode; voltage differences are unaffected.
//!
//! One banded Cholesky factorization is reused across all drive patterns of
//! a protocol, and the Jacobian is assembled by the adjoint method from the
//! same family of fields (O(C) solves instead of O(M)).

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::mesh::{ElectrodeLayout, Mesh};
use crate::protocol::Protocol;
use crate::{Error, Result};

/// Weight of the rank-one gauge penalty on the electrode-potential sum.
const GAUGE_WEIGHT: f64 = 1.0;

/// Per-element conductivities, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductivity(Vec<f64>);

impl Conductivity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("conductivity vector is empty".into()));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "conductivity entries must be strictly positive and finite".into(),
            ));
        }
        Ok(Conductivity(values))
    }

    pub fn homogeneous(value: f64, element_count: usize) -> Result<Self> {
        Conductivity::new(vec![value; element_count])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        Conductivity::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Measurement sensitivities: `D` rows (protocol order), `M` columns.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub background: Conductivity,
    pub protocol_id: String,
    pub layout_id: String,
}

impl Jacobian {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

// ---------------------------------------------------------------------------
// Banded SPD factorization
// ---------------------------------------------------------------------------

/// Symmetric matrix stored as its lower band: entry (i, j) with
/// `0 <= i - j <= bandwidth` lives at `data[j * (bandwidth + 1) + (i - j)]`.
pub struct BandMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        BandMatrix { n, bandwidth, data: vec![0.0; n * (bandwidth + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bandwidth);
        j * (self.bandwidth + 1) + (i - j)
    }

    /// Adds `v` to the symmetric entry (i, j); only the lower copy is stored.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let idx = self.idx(i, j);
        self.data[idx] += v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.idx(i, j);
        self.data[idx] = v;
    }

    /// In-place banded Cholesky, `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bandwidth;
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in j.saturating_sub(bw)..j {
                let l = self.get(j, k);
                d -= l * l;
            }
            if !(d > 0.0) {
                return Err(Error::Singular(format!(
                    "banded Cholesky broke down at pivot {j} (d = {d:.3e})"
                )));
            }
            let ljj = d.sqrt();
            self.set(j, j, ljj);
            let imax = (j + bw).min(n - 1);
            for i in j + 1..=imax {
                let mut v = self.get(i, j);
                for k in i.saturating_sub(bw)..j {
                    v -= self.get(i, k) * self.get(j, k);
                }
                self.set(i, j, v / ljj);
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Lower-triangular banded Cholesky factor; read-only after construction.
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.factor.n;
        let bw = self.factor.bandwidth;
        let mut y = rhs.clone();
        for j in 0..n {
            let mut v = y[j];
            for k in j.saturating_sub(bw)..j {
                v -= self.factor.get(j, k) * y[k];
            }
            y[j] = v / self.factor.get(j, j);
        }
        for j in (0..n).rev() {
            let imax = (j + bw).min(n - 1);
            let mut v = y[j];
            for i in j + 1..=imax {
                v -= self.factor.get(i, j) * y[i];
            }
            y[j] = v / self.factor.get(j, j);
        }
        y
    }
}

// ---------------------------------------------------------------------------
// Geometry caches
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BoundaryEdge {
    nodes: [usize; 2],
    element: usize,
    length: f64,
    mid_angle: f64,
}

/// Layout-independent per-mesh data: unit-conductivity local stiffness
/// matrices and the boundary edge table. Build once, share across layouts.
pub struct MeshGeometry {
    local_stiffness: Vec<[[f64; 3]; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

impl MeshGeometry {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let mut local_stiffness = Vec::with_capacity(mesh.element_count());
        let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.nodes[v]).collect();
            let area = mesh.signed_area(t);
            if area <= 0.0 {
                return Err(Error::InvalidParameter(format!("element {t} has non-positive area")));
            }
            let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
            let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
            let mut k = [[0.0; 3]; 3];
            for r in 0..3 {
                for s in 0..3 {
                    k[r][s] = (b[r] * b[s] + c[r] * c[s]) / (4.0 * area);
                }
            }
            local_stiffness.push(k);
            for e in 0..3 {
                let a = tri[e];
                let bb = tri[(e + 1) % 3];
                let key = (a.min(bb), a.max(bb));
                edge_owner.insert(key, t);
            }
        }
        // Interior edges are inserted twice (overwritten); boundary edges once,
        // and the boundary ring tells us which pairs those are.
        let nb = mesh.boundary.len();
        let mut boundary_edges = Vec::with_capacity(nb);
        for i in 0..nb {
            let a = mesh.boundary[i];
            let b = mesh.boundary[(i + 1) % nb];
            let key = (a.min(b), a.max(b));
            let &element = edge_owner.get(&key).ok_or_else(|| {
                Error::InvalidParameter(format!("boundary edge ({a},{b}) has no owning element"))
            })?;
            let pa = mesh.nodes[a];
            let pb = mesh.nodes[b];
            let length = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
            let mut mid_angle = mid[1].atan2(mid[0]);
            if mid_angle < 0.0 {
                mid_angle += 2.0 * PI;
            }
            boundary_edges.push(BoundaryEdge { nodes: [a, b], element, length, mid_angle });
        }
        Ok(MeshGeometry { local_stiffness, boundary_edges })
    }
}

#[derive(Debug, Clone)]
struct ContactEdge {
    nodes: [usize; 2],
    element: usize,
    electrode: usize,
    length: f64,
    /// 1 / contact impedance of the electrode.
    admittance: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Assigns boundary edges to electrodes by edge-midpoint membership in the
/// electrode arcs. Every electrode must receive at least one edge.
fn contact_edges(geom: &MeshGeometry, layout: &ElectrodeLayout) -> Result<Vec<ContactEdge>> {
    if layout
        .contact_impedance
        .iter()
        .any(|&z| !(z > 0.0) || !z.is_finite())
    {
        return Err(Error::InvalidParameter("contact impedance must be positive".into()));
    }
    let mut contacts = Vec::new();
    let mut per_electrode = vec![0usize; layout.electrode_count()];
    for edge in &geom.boundary_edges {
        for (l, &center) in layout.centers.iter().enumerate() {
            if wrap_angle(edge.mid_angle - center).abs() <= layout.arc_half_width {
                contacts.push(ContactEdge {
                    nodes: edge.nodes,
                    element: edge.element,
                    electrode: l,
                    length: edge.length,
                    admittance: 1.0 / layout.contact_impedance[l],
                });
                per_electrode[l] += 1;
                break;
            }
        }
    }
    if let Some(l) = per_electrode.iter().position(|&c| c == 0) {
        return Err(Error::InvalidParameter(format!(
            "electrode {l} covers no boundary edge; refine the mesh or widen the arc"
        )));
    }
    Ok(contacts)
}

// ---------------------------------------------------------------------------
// Assembled operator
// ---------------------------------------------------------------------------

/// Factorized complete-electrode-model system for one mesh/conductivity/layout.
pub struct CemOperator {
    node_count: usize,
    electrode_count: usize,
    chol: BandCholesky,
}

impl CemOperator {
    pub fn assemble(
        mesh: &Mesh,
        geom: &MeshGeometry,
        sigma: &Conductivity,
        layout: &ElectrodeLayout,
    ) -> Result<Self> {
        if sigma.len() != mesh.element_count() {
            return Err(Error::Dimension(format!(
                "conductivity has {} entries, mesh has {} elements",
                sigma.len(),
                mesh.element_count()
            )));
        }
        let contacts = contact_edges(geom, layout)?;
        let nn = mesh.node_count();
        let ne = layout.electrode_count();
        let n = nn + ne;

        let mut bandwidth = ne.saturating_sub(1);
        for tri in &mesh.triangles {
            for r in 0..3 {
                for s in 0..3 {
                    bandwidth = bandwidth.max(tri[r].abs_diff(tri[s]));
                }
            }
        }
        for c in &contacts {
            let e = nn + c.electrode;
            for &a in &c.nodes {
                bandwidth = bandwidth.max(e - a);
            }
        }

        let mut a = BandMatrix::zeros(n, bandwidth);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let s = sigma.values()[t];
            let k = &geom.local_stiffness[t];
            for r in 0..3 {
                a.add(tri[r], tri[r], s * k[r][r]);
                for c in r + 1..3 {
                    // Off-diagonal pairs appear once in the lower store.
                    a.add(tri[r], tri[c], s * k[r][c]);
                }
            }
        }
        for c in &contacts {
            let s = sigma.values()[c.element];
            let g = s * c.admittance;
            let [p, q] = c.nodes;
            let e = nn + c.electrode;
            let len = c.length;
            a.add(p, p, g * len / 3.0);
            a.add(q, q, g * len / 3.0);
            a.add(p, q, g * len / 6.0);
            a.add(p, e, -g * len / 2.0);
            a.add(q, e, -g * len / 2.0);
            a.add(e, e, g * len);
        }
        for i in 0..ne {
            a.add(nn + i, nn + i, GAUGE_WEIGHT);
            for j in i + 1..ne {
                a.add(nn + i, nn + j, GAUGE_WEIGHT);
            }
        }

        let chol = a.cholesky()?;
        Ok(CemOperator { node_count: nn, electrode_count: ne, chol })
    }

    /// Potentials (nodes then electrodes) under `amplitude` current injected
    /// at electrode `plus` and withdrawn at `minus`.
    pub fn solve_pair(&self, plus: usize, minus: usize, amplitude: f64) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.node_count + self.electrode_count);
        rhs[self.node_count + plus] = amplitude;
        rhs[self.node_count + minus] = -amplitude;
        self.chol.solve(&rhs)
    }

    pub fn electrode_potential(&self, solution: &DVector<f64>, electrode: usize) -> f64 {
        solution[self.node_count + electrode]
    }
}

fn check_protocol_layout(protocol: &Protocol, layout: &ElectrodeLayout) -> Result<()> {
    if protocol.electrode_count != layout.electrode_count() {
        return Err(Error::Mismatch(format!(
            "protocol has {} electrodes, layout has {}",
            protocol.electrode_count,
            layout.electrode_count()
        )));
    }
    Ok(())
}

fn unique_pairs(pairs: impl Iterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    let mut seen = Vec::new();
    for p in pairs {
        if !seen.contains(&p) {
            seen.push(p);
        }
    }
    seen
}

/// Solves every unique injection pair once and returns the fields keyed by pair.
fn solve_fields(
    op: &CemOperator,
    pairs: &[(usize, usize)],
    amplitude: f64,
) -> HashMap<(usize, usize), DVector<f64>> {
    pairs
        .iter()
        .map(|&(p, m)| ((p, m), op.solve_pair(p, m, amplitude)))
        .collect()
}

/// Measurement vector `d` for the protocol: voltage across each sense pair
/// under the given drive current.
pub fn solve_forward(
    mesh: &Mesh,
    sigma: &Conductivity,
    layout: &ElectrodeLayout,
    protocol: &Protocol,
    amplitude: f64,
) -> Result<DVector<f64>> {
    let geom = MeshGeometry::new(mesh)?;
    solve_forward_with_geometry(mesh, &geom, sigma, layout, protocol, amplitude)
}

pub fn solve_forward_with_geometry(
    mesh: &Mesh,
    geom: &MeshGeometry,
    sigma: &Conductivity,
    layout: &ElectrodeLayout,
    protocol: &Protocol,
    amplitude: f64,
) -> Result<DVector<f64>> {
    check_protocol_layout(protocol, layout)?;
    protocol.validate()?;
    let op = CemOperator::assemble(mesh, geom, sigma, layout)?;
    let drives = unique_pairs(protocol.measurements.iter().map(|m| m.drive));
    let fields = solve_fields(&op, &drives, amplitude);
    let d = DVector::from_iterator(
        protocol.len(),
        protocol.measurements.iter().map(|m| {
            let x = &fields[&m.drive];
            op.electrode_potential(x, m.sense.0) - op.electrode_potential(x, m.sense.1)
        }),
    );
    Ok(d)
}

/// Net current delivered through each electrode for a drive pattern, computed
/// from the contact-impedance flux of the solved field. Used by conservation
/// checks.
pub fn electrode_currents(
    mesh: &Mesh,
    geom: &MeshGeometry,
    sigma: &Conductivity,
    layout: &ElectrodeLayout,
    drive: (usize, usize),
    amplitude: f64,
) -> Result<Vec<f64>> {
    let op = CemOperator::assemble(mesh, geom, sigma, layout)?;
    let x = op.solve_pair(drive.0, drive.1, amplitude);
    let contacts = contact_edges(geom, layout)?;
    let nn = mesh.node_count();
    let mut currents = vec![0.0; layout.electrode_count()];
    for c in &contacts {
        let g = sigma.values()[c.element] * c.admittance;
        let [p, q] = c.nodes;
        let u_e = x[nn + c.electrode];
        currents[c.electrode] += g * (c.length * u_e - c.length / 2.0 * (x[p] + x[q]));
    }
    Ok(currents)
}

/// Adjoint-method Jacobian: row `i`, column `k` is `∂d_i/∂σ_k` at `sigma0`,
/// from the product of the drive field and the sense-pair adjoint field
/// through element `k`'s unit system matrix (stiffness plus contact terms).
pub fn compute_jacobian(
    mesh: &Mesh,
    sigma0: &Conductivity,
    layout: &ElectrodeLayout,
    protocol: &Protocol,
) -> Result<Jacobian> {
    let geom = MeshGeometry::new(mesh)?;
    compute_jacobian_with_geometry(mesh, &geom, sigma0, layout, protocol)
}

pub fn compute_jacobian_with_geometry(
    mesh: &Mesh,
    geom: &MeshGeometry,
    sigma0: &Conductivity,
    layout: &ElectrodeLayout,
    protocol: &Protocol,
) -> Result<Jacobian> {
    check_protocol_layout(protocol, layout)?;
    protocol.validate()?;
    let op = CemOperator::assemble(mesh, geom, sigma0, layout)?;
    let pairs = unique_pairs(
        protocol
            .measurements
            .iter()
            .flat_map(|m| [m.drive, m.sense]),
    );
    let fields = solve_fields(&op, &pairs, 1.0);
    let contacts = contact_edges(geom, layout)?;
    let mut contacts_by_element: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, c) in contacts.iter().enumerate() {
        contacts_by_element.entry(c.element).or_default().push(i);
    }
    let nn = mesh.node_count();
    let m_count = mesh.element_count();

    let mut matrix = DMatrix::zeros(protocol.len(), m_count);
    for (i, meas) in protocol.measurements.iter().enumerate() {
        let xd = &fields[&meas.drive];
        let xs = &fields[&meas.sense];
        for (k, tri) in mesh.triangles.iter().enumerate() {
            let kl = &geom.local_stiffness[k];
            let mut acc = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    acc += kl[r][c] * xs[tri[r]] * xd[tri[c]];
                }
            }
            if let Some(edges) = contacts_by_element.get(&k) {
                for &ei in edges {
                    let ce = &contacts[ei];
                    let [p, q] = ce.nodes;
                    let e = nn + ce.electrode;
                    let len = ce.length;
                    let g = ce.admittance;
                    acc += g
                        * (len / 6.0
                            * (2.0 * xs[p] * xd[p]
                                + xs[p] * xd[q]
                                + xs[q] * xd[p]
                                + 2.0 * xs[q] * xd[q])
                            - len / 2.0 * ((xs[p] + xs[q]) * xd[e] + (xd[p] + xd[q]) * xs[e])
                            + len * xs[e] * xd[e]);
                }
            }
            matrix[(i, k)] = -acc;
        }
    }

    Ok(Jacobian {
        matrix,
        background: sigma0.clone(),
        protocol_id: protocol.id(),
        layout_id: layout.id(),
    })
}
