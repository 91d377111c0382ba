//! Sensitivity-volume electrode placement search over a POD basis.
//!
//! The POD modes are first pushed into mesh-element space through the
//! reference Jacobian (`Φ_M = J_refᵀ Φ`). Each candidate electrode subset is
//! then scored by the Gram volume of its own skip-protocol Jacobian rows
//! expressed in those POD coordinates, `½·log det(AᵀA)` with
//! `A = J_cand Φ_M`. Scores are computed in log space throughout; a
//! rank-deficient candidate scores `−∞`.

use std::collections::BTreeSet;

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::fem::{self, Conductivity, Jacobian};
use crate::mesh::{self, ElectrodeLayout, Mesh};
use crate::pod::PodBasis;
use crate::protocol;
use crate::{Error, Result};

/// Relative singular-value cutoff below which a Gram factor counts as rank
/// deficient.
const RANK_TOL: f64 = 1e-12;

/// POD modes mapped into mesh-element space: `M × P`.
#[derive(Debug, Clone)]
pub struct MeshPod {
    pub matrix: DMatrix<f64>,
    pub source_basis: String,
    pub reference_jacobian: String,
}

impl MeshPod {
    pub fn mode_count(&self) -> usize {
        self.matrix.ncols()
    }
}

/// One scored candidate electrode subset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementScore {
    pub selected_slots: Vec<usize>,
    /// Natural log of the POD sensitivity; `−∞` flags a rank-deficient candidate.
    pub log_score: f64,
    /// 1-based position in descending-score order.
    pub rank: usize,
}

/// Which Gram determinant scores a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMethod {
    /// `½ log det(AᵀA)` with `A = J_cand Φ_M`: Gram volume of the candidate
    /// measurements in POD coordinates.
    #[default]
    GramInPod,
    /// `½ log det(Φᵀ J J ᵀ Φ)`: the alternative reading with the data-space
    /// modes applied directly; requires the candidate measurement count to
    /// equal the basis frame length.
    GramInData,
}

/// `Φ_M = J_refᵀ Φ_P`.
pub fn mesh_pod(j_ref: &Jacobian, basis: &PodBasis, p: usize) -> Result<MeshPod> {
    if j_ref.rows() != basis.frame_len() {
        return Err(Error::Dimension(format!(
            "jacobian has {} rows, basis frames have length {}",
            j_ref.rows(),
            basis.frame_len()
        )));
    }
    if p == 0 || p > basis.mode_count() {
        return Err(Error::InvalidParameter(format!(
            "truncation P={p} outside 1..={}",
            basis.mode_count()
        )));
    }
    Ok(MeshPod {
        matrix: j_ref.matrix.transpose() * basis.modes.columns(0, p),
        source_basis: basis.id(),
        reference_jacobian: format!("{}/{}", j_ref.protocol_id, j_ref.layout_id),
    })
}

/// `½ log det(B BᵀB ...)` for a factor `B`: sum of log singular values over
/// `B`'s columns, `−∞` when `B` is column-rank deficient.
fn log_gram_volume(b: &DMatrix<f64>) -> f64 {
    let cols = b.ncols();
    let mut svd = b.clone().svd(false, false);
    svd.sort_by_singular_values();
    let sv = &svd.singular_values;
    if sv.len() < cols {
        return f64::NEG_INFINITY;
    }
    let lead = sv[0];
    if !(lead > 0.0) || sv[cols - 1] <= RANK_TOL * lead {
        return f64::NEG_INFINITY;
    }
    (0..cols).map(|i| sv[i].ln()).sum()
}

/// Log sensitivity volume of a measurement set: `½ log det(J Jᵀ)`.
pub fn sensitivity(j: &Jacobian) -> Result<f64> {
    if j.rows() > j.cols() {
        return Err(Error::Dimension(format!(
            "sensitivity needs D ≤ M, got D={} M={}",
            j.rows(),
            j.cols()
        )));
    }
    if j.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("jacobian contains non-finite entries".into()));
    }
    // det(JJᵀ) over rows equals the squared product of J's singular values.
    Ok(log_gram_volume(&j.matrix.transpose()))
}

/// Log POD sensitivity of a candidate Jacobian against a fixed mesh POD
/// matrix: `½ log det(AᵀA)` with `A = J_cand Φ_M`.
pub fn pod_sensitivity(j_cand: &Jacobian, mesh_pod: &MeshPod) -> Result<f64> {
    if j_cand.cols() != mesh_pod.matrix.nrows() {
        return Err(Error::Dimension(format!(
            "jacobian has {} columns, mesh POD matrix has {} rows",
            j_cand.cols(),
            mesh_pod.matrix.nrows()
        )));
    }
    if j_cand.rows() < mesh_pod.mode_count() {
        return Err(Error::Dimension(format!(
            "candidate supplies {} measurements, fewer than P={}",
            j_cand.rows(),
            mesh_pod.mode_count()
        )));
    }
    let a = &j_cand.matrix * &mesh_pod.matrix;
    Ok(log_gram_volume(&a))
}

/// All `C(slot_count, select)` slot subsets in lexicographic order.
pub fn enumerate_candidates(
    slot_count: usize,
    select: usize,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    if select > slot_count {
        return Err(Error::InvalidParameter(format!(
            "cannot select {select} of {slot_count} slots"
        )));
    }
    Ok((0..slot_count).combinations(select))
}

/// Knobs for [`optimize_placement`].
#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Electrode arc half-width for candidate layouts; defaults to half the
    /// candidate slot pitch.
    pub electrode_arc: Option<f64>,
    pub method: ScoreMethod,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { electrode_arc: None, method: ScoreMethod::GramInPod }
    }
}

/// Exhaustive placement search.
///
/// `Φ_M` is computed once from the reference layout's skip-protocol Jacobian
/// on the homogeneous background; every candidate subset is then scored with
/// its own Jacobian on the same mesh. Candidate scoring runs in parallel but
/// the returned ranking is deterministic: descending score, ties broken by
/// the lexicographically smallest slot set.
pub fn optimize_placement(
    mesh: &Mesh,
    basis: &PodBasis,
    reference_layout: &ElectrodeLayout,
    slot_count: usize,
    select: usize,
    p: usize,
    options: &SearchOptions,
) -> Result<Vec<PlacementScore>> {
    if select < 5 {
        return Err(Error::InvalidParameter(format!(
            "candidates need at least 5 electrodes for a skip protocol, got {select}"
        )));
    }
    let ref_protocol = protocol::skip_protocol(reference_layout.electrode_count())?;
    if basis.protocol_id != ref_protocol.id() {
        return Err(Error::Mismatch(format!(
            "basis was fit under protocol {}, reference layout implies {}",
            basis.protocol_id,
            ref_protocol.id()
        )));
    }

    let geom = fem::MeshGeometry::new(mesh)?;
    let sigma = Conductivity::homogeneous(1.0, mesh.element_count())?;
    let j_ref =
        fem::compute_jacobian_with_geometry(mesh, &geom, &sigma, reference_layout, &ref_protocol)?;
    let phi_m = mesh_pod(&j_ref, basis, p)?;

    let cand_protocol = protocol::skip_protocol(select)?;
    let arc = options
        .electrode_arc
        .unwrap_or_else(|| mesh::default_arc_half_width(slot_count));

    let candidates: Vec<Vec<usize>> = enumerate_candidates(slot_count, select)?.collect();
    let scored: Result<Vec<PlacementScore>> = candidates
        .into_par_iter()
        .map(|slots| {
            let set: BTreeSet<usize> = slots.iter().copied().collect();
            let layout = mesh::layout_from_slots(slot_count, &set, arc)?;
            let j_cand = fem::compute_jacobian_with_geometry(
                mesh,
                &geom,
                &sigma,
                &layout,
                &cand_protocol,
            )?;
            let log_score = match options.method {
                ScoreMethod::GramInPod => pod_sensitivity(&j_cand, &phi_m)?,
                ScoreMethod::GramInData => {
                    if j_cand.rows() != basis.frame_len() {
                        return Err(Error::Dimension(format!(
                            "data-space scoring needs candidate D={} to match basis D={}",
                            j_cand.rows(),
                            basis.frame_len()
                        )));
                    }
                    log_gram_volume(&(j_cand.matrix.transpose() * basis.modes.columns(0, p)))
                }
            };
            Ok(PlacementScore { selected_slots: slots, log_score, rank: 0 })
        })
        .collect();
    let mut scored = scored?;

    if scored.iter().all(|s| s.log_score == f64::NEG_INFINITY) {
        return Err(Error::Singular("every candidate placement is rank deficient".into()));
    }
    scored.sort_by(|a, b| {
        b.log_score
            .total_cmp(&a.log_score)
            .then_with(|| a.selected_slots.cmp(&b.selected_slots))
    });
    for (i, s) in scored.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(scored)
}
