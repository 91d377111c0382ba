//! Gappy reconstruction of measurement frames with bad electrodes.
//!
//! Given a basis fit on complete frames, a frame missing every measurement
//! that touches a bad electrode is lifted back to full length by solving for
//! the POD coordinates on the surviving rows and re-expanding with all rows:
//! `d'' = Φ''·(Φ')⁻¹·d'`. `Φ'` keeps the first `D'` modes and only the valid
//! rows, so it is square; its inversion goes through an SVD with a recorded
//! condition number rather than an explicit inverse, and near-singular cases
//! fail loudly unless the regularized pseudo-inverse is requested.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::pod::PodBasis;
use crate::protocol::Protocol;
use crate::{Error, Result};

/// Relative singular-value cutoff for the regularized pseudo-inverse.
const REGULARIZE_CUTOFF: f64 = 1e-10;

/// Default `Φ'` condition-number limit above which construction fails.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub condition_limit: f64,
    /// Truncate tiny singular values instead of failing on conditioning.
    pub regularize: bool,
    /// Use fewer than `D'` modes with a least-squares solve.
    pub mode_count: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            condition_limit: DEFAULT_CONDITION_LIMIT,
            regularize: false,
            mode_count: None,
        }
    }
}

/// Precomputed map from a valid-measurement subvector to a full-length frame.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    pub bad_electrodes: BTreeSet<usize>,
    /// Measurement indices kept, in protocol order; length `D'`.
    pub valid_indices: Vec<usize>,
    /// `D × D'` matrix `Φ''·(Φ')⁻¹` (pseudo-inverse when regularized).
    pub map: DMatrix<f64>,
    /// Condition number of `Φ'`.
    pub condition: f64,
    pub basis_id: String,
    pub protocol_id: String,
    pub modes_used: usize,
    mean: Option<DVector<f64>>,
}

impl ProjectionOperator {
    /// Full frame length `D`.
    pub fn frame_len(&self) -> usize {
        self.map.nrows()
    }

    /// Reduced length `D'`.
    pub fn reduced_len(&self) -> usize {
        self.valid_indices.len()
    }

    /// Restriction of a full frame to the valid measurements.
    pub fn restrict(&self, frame: &DVector<f64>) -> Result<DVector<f64>> {
        if frame.len() != self.frame_len() {
            return Err(Error::Dimension(format!(
                "frame length {} does not match D={}",
                frame.len(),
                self.frame_len()
            )));
        }
        Ok(DVector::from_iterator(
            self.reduced_len(),
            self.valid_indices.iter().map(|&i| frame[i]),
        ))
    }
}

/// Builds the dropout-compensation operator for the given bad electrode set.
pub fn build_projector(
    basis: &PodBasis,
    protocol: &Protocol,
    bad_electrodes: &BTreeSet<usize>,
    options: &BuildOptions,
) -> Result<ProjectionOperator> {
    if basis.protocol_id != protocol.id() {
        return Err(Error::Mismatch(format!(
            "basis was fit under protocol {}, operator requested for {}",
            basis.protocol_id,
            protocol.id()
        )));
    }
    if basis.frame_len() != protocol.len() {
        return Err(Error::Dimension(format!(
            "basis frame length {} does not match protocol D={}",
            basis.frame_len(),
            protocol.len()
        )));
    }
    let valid_indices = protocol.valid_subset(bad_electrodes)?;
    let d_prime = valid_indices.len();
    let modes_used = options.mode_count.unwrap_or(d_prime);
    if modes_used == 0 || modes_used > d_prime {
        return Err(Error::InvalidParameter(format!(
            "mode count {modes_used} outside 1..=D'={d_prime}"
        )));
    }
    if basis.mode_count() < modes_used {
        return Err(Error::InvalidParameter(format!(
            "basis holds {} modes, operator needs {modes_used}",
            basis.mode_count()
        )));
    }

    // Φ': valid rows, first `modes_used` columns. Φ'': all rows.
    let phi_full = basis.modes.columns(0, modes_used).into_owned();
    let phi_prime = DMatrix::from_fn(d_prime, modes_used, |r, c| phi_full[(valid_indices[r], c)]);

    let mut svd = phi_prime.svd(true, true);
    svd.sort_by_singular_values();
    let sv = &svd.singular_values;
    let s_max = sv[0];
    let s_min = sv[sv.len() - 1];
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !options.regularize && condition > options.condition_limit {
        return Err(Error::IllConditioned { condition, limit: options.condition_limit });
    }

    let cutoff = if options.regularize { REGULARIZE_CUTOFF * s_max } else { 0.0 };
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    // pinv(Φ') = V Σ⁺ Uᵀ, dropping singular values at or below the cutoff.
    let mut sigma_inv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in sv.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    let pinv = vt.transpose() * sigma_inv * u.transpose();
    let map = phi_full * pinv;

    Ok(ProjectionOperator {
        bad_electrodes: bad_electrodes.clone(),
        valid_indices,
        map,
        condition,
        basis_id: basis.id(),
        protocol_id: basis.protocol_id.clone(),
        modes_used,
        mean: basis.mean.clone(),
    })
}

/// Lifts a reduced frame back to full length. With a centered basis the mean
/// is subtracted on the valid entries and restored on the output.
pub fn apply_projector(op: &ProjectionOperator, d_reduced: &DVector<f64>) -> Result<DVector<f64>> {
    if d_reduced.len() != op.reduced_len() {
        return Err(Error::Dimension(format!(
            "reduced frame has length {}, operator expects D'={}",
            d_reduced.len(),
            op.reduced_len()
        )));
    }
    match &op.mean {
        None => Ok(&op.map * d_reduced),
        Some(mean) => {
            let centered = DVector::from_iterator(
                op.reduced_len(),
                op.valid_indices
                    .iter()
                    .zip(d_reduced.iter())
                    .map(|(&i, &v)| v - mean[i]),
            );
            Ok(&op.map * centered + mean)
        }
    }
}

/// One row of the per-electrode dropout conditioning table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionRow {
    pub electrode: usize,
    pub valid_count: usize,
    pub condition: f64,
    /// `true` when the condition number exceeds [`DEFAULT_CONDITION_LIMIT`].
    pub flagged: bool,
    /// Median relative round-trip residual of in-span held-out frames, when
    /// frames were supplied.
    pub in_span_residual: Option<f64>,
}

/// Single-electrode dropout ablation: for each electrode, the surviving
/// measurement count, the conditioning of `Φ'`, and the in-span round-trip
/// residual over the supplied held-out frames. Rows are ordered by electrode.
pub fn conditioning_report(
    basis: &PodBasis,
    protocol: &Protocol,
    held_out: &[DVector<f64>],
) -> Result<Vec<ConditionRow>> {
    let opts = BuildOptions { condition_limit: f64::INFINITY, regularize: false, mode_count: None };
    let mut rows = Vec::with_capacity(protocol.electrode_count);
    for e in 0..protocol.electrode_count {
        let bad: BTreeSet<usize> = [e].into_iter().collect();
        let op = build_projector(basis, protocol, &bad, &opts)?;
        let mut residuals: Vec<f64> = Vec::new();
        for frame in held_out {
            let in_span = project_onto_span(basis, op.modes_used, frame);
            let norm = in_span.norm();
            if norm == 0.0 {
                continue;
            }
            let lifted = apply_projector(&op, &op.restrict(&in_span)?)?;
            residuals.push((lifted - &in_span).norm() / norm);
        }
        residuals.sort_by(f64::total_cmp);
        let in_span_residual = if residuals.is_empty() {
            None
        } else {
            Some(residuals[residuals.len() / 2])
        };
        rows.push(ConditionRow {
            electrode: e,
            valid_count: op.reduced_len(),
            condition: op.condition,
            flagged: op.condition > DEFAULT_CONDITION_LIMIT,
            in_span_residual,
        });
    }
    Ok(rows)
}

/// Orthogonal projection of a frame onto the span of the first `k` modes
/// (about the mean for centered bases).
pub fn project_onto_span(basis: &PodBasis, k: usize, frame: &DVector<f64>) -> DVector<f64> {
    let modes = basis.modes.columns(0, k);
    match &basis.mean {
        None => &modes * (modes.transpose() * frame),
        Some(mean) => &modes * (modes.transpose() * (frame - mean)) + mean,
    }
}
