//! Proper orthogonal decomposition of measurement frames.
//!
//! A snapshot matrix holds one measurement frame per column. The basis is
//! computed through a thin SVD of the (optionally centered) snapshots; the
//! snapshot Gram matrix `UᵀU/(n-1)` is kept as an independent route and the
//! two are cross-checked in tests (method of snapshots).

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Eigenvalues below this fraction of the leading one count as zero rank.
const RANK_TOL: f64 = 1e-12;

/// Measurement frames as columns of a `D × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub frames: DMatrix<f64>,
    pub protocol_id: String,
    pub timestamps: Option<Vec<f64>>,
}

impl SnapshotMatrix {
    pub fn new(frames: DMatrix<f64>, protocol_id: impl Into<String>) -> Result<Self> {
        if frames.ncols() == 0 {
            return Err(Error::InvalidParameter("snapshot matrix needs at least one frame".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("snapshot matrix contains non-finite entries".into()));
        }
        Ok(SnapshotMatrix { frames, protocol_id: protocol_id.into(), timestamps: None })
    }

    /// Frame length `D`.
    pub fn frame_len(&self) -> usize {
        self.frames.nrows()
    }

    /// Frame count `n`.
    pub fn frame_count(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, i: usize) -> DVector<f64> {
        self.frames.column(i).into_owned()
    }
}

/// Orthonormal modes in descending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `D × R` matrix whose columns are the modes.
    pub modes: DMatrix<f64>,
    /// Per-mode variances (squared singular values over `n-1`), descending.
    pub eigenvalues: Vec<f64>,
    /// Snapshot mean, present iff `centered`.
    pub mean: Option<DVector<f64>>,
    pub centered: bool,
    pub protocol_id: String,
}

impl PodBasis {
    pub fn frame_len(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.ncols()
    }

    pub fn mode(&self, i: usize) -> DVector<f64> {
        self.modes.column(i).into_owned()
    }

    /// Short content hash, used to stamp downstream artifacts.
    pub fn id(&self) -> String {
        crate::io::short_hash(&crate::io::basis_json_bytes(self))
    }
}

/// Snapshot Gram/covariance matrix `UᵀU/(n-1)`, with optional column centering.
pub fn covariance(snapshots: &SnapshotMatrix, center: bool) -> Result<DMatrix<f64>> {
    let n = snapshots.frame_count();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "covariance needs at least 2 frames, got {n}"
        )));
    }
    let u = centered_frames(snapshots, center);
    Ok(u.transpose() * &u / (n as f64 - 1.0))
}

fn centered_frames(snapshots: &SnapshotMatrix, center: bool) -> DMatrix<f64> {
    let mut u = snapshots.frames.clone();
    if center {
        let mean = column_mean(&snapshots.frames);
        for mut col in u.column_iter_mut() {
            col -= &mean;
        }
    }
    u
}

fn column_mean(frames: &DMatrix<f64>) -> DVector<f64> {
    let n = frames.ncols() as f64;
    let mut mean = DVector::zeros(frames.nrows());
    for col in frames.column_iter() {
        mean += col;
    }
    mean / n
}

/// Fits a POD basis by thin SVD of the snapshot matrix.
///
/// Mode signs are normalized so each mode's largest-magnitude entry is
/// positive, which makes serialized bases reproducible.
pub fn fit_pod(snapshots: &SnapshotMatrix, center: bool, max_modes: usize) -> Result<PodBasis> {
    if max_modes < 1 {
        return Err(Error::InvalidParameter("max_modes must be at least 1".into()));
    }
    let n = snapshots.frame_count();
    if center && n < 2 {
        return Err(Error::InvalidParameter("centered POD needs at least 2 frames".into()));
    }
    let u = centered_frames(snapshots, center);
    let denom = if n > 1 { n as f64 - 1.0 } else { 1.0 };

    let mut svd = u.svd(true, false);
    svd.sort_by_singular_values();
    let left = svd.u.as_ref().expect("left singular vectors requested");

    let full_rank_cap = if center { n.saturating_sub(1) } else { n }.min(snapshots.frame_len());
    let r = max_modes.min(full_rank_cap).min(svd.singular_values.len());

    let mut modes = DMatrix::zeros(snapshots.frame_len(), r);
    let mut eigenvalues = Vec::with_capacity(r);
    for j in 0..r {
        let mut col = left.column(j).into_owned();
        // Sign convention: largest-magnitude entry positive.
        let lead = col
            .iter()
            .cloned()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            col = -col;
        }
        modes.set_column(j, &col);
        let s = svd.singular_values[j];
        eigenvalues.push((s * s / denom).max(0.0));
    }

    Ok(PodBasis {
        modes,
        eigenvalues,
        mean: if center { Some(column_mean(&snapshots.frames)) } else { None },
        centered: center,
        protocol_id: snapshots.protocol_id.clone(),
    })
}

/// Numerical rank of the basis: modes with eigenvalue above `RANK_TOL`
/// relative to the leading eigenvalue.
pub fn effective_rank(basis: &PodBasis) -> usize {
    let lead = basis.eigenvalues.first().copied().unwrap_or(0.0);
    if lead <= 0.0 {
        return 0;
    }
    basis.eigenvalues.iter().filter(|&&e| e > RANK_TOL * lead).count()
}

/// Coordinates of `frame` in the first `k` modes.
pub fn project(basis: &PodBasis, frame: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
    if k > basis.mode_count() {
        return Err(Error::Dimension(format!(
            "requested {k} coordinates, basis has {} modes",
            basis.mode_count()
        )));
    }
    if frame.len() != basis.frame_len() {
        return Err(Error::Dimension(format!(
            "frame length {} does not match basis D={}",
            frame.len(),
            basis.frame_len()
        )));
    }
    let centered = match &basis.mean {
        Some(mean) => frame - mean,
        None => frame.clone(),
    };
    Ok(basis.modes.columns(0, k).transpose() * centered)
}

/// Frame reconstructed from POD coordinates `p` (first `|p|` modes).
pub fn reconstruct(basis: &PodBasis, p: &DVector<f64>) -> Result<DVector<f64>> {
    let k = p.len();
    if k > basis.mode_count() {
        return Err(Error::Dimension(format!(
            "{k} coordinates given, basis has {} modes",
            basis.mode_count()
        )));
    }
    let mut frame = basis.modes.columns(0, k) * p;
    if let Some(mean) = &basis.mean {
        frame += mean;
    }
    Ok(frame)
}
