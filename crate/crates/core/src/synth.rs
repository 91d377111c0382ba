//! Synthetic conductivity sessions with ground truth.
//!
//! Frames combine a moving circular anomaly (a stand-in for tissue state)
//! with per-frame contact-impedance jitter and additive sensor noise. Each
//! frame draws from its own RNG stream split off the session seed, so
//! parallel and serial generation agree bit for bit.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fem::{self, Conductivity};
use crate::mesh::{ElectrodeLayout, Mesh};
use crate::pod::SnapshotMatrix;
use crate::protocol::Protocol;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub center: [f64; 2],
    pub radius: f64,
    pub conductivity: f64,
}

/// Background conductivity plus circular inclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub background: f64,
    #[serde(default)]
    pub anomalies: Vec<Anomaly>,
}

/// Per-element conductivity: background, overridden by the anomaly value
/// wherever the element centroid falls inside an inclusion. Later anomalies
/// win on overlap.
pub fn make_phantom(phantom: &Phantom, mesh: &Mesh) -> Result<Conductivity> {
    if !(phantom.background > 0.0) {
        return Err(Error::InvalidParameter("phantom background must be positive".into()));
    }
    for (i, a) in phantom.anomalies.iter().enumerate() {
        if !(a.conductivity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "anomaly {i} has non-positive conductivity"
            )));
        }
        if !(a.radius > 0.0) {
            return Err(Error::InvalidParameter(format!("anomaly {i} has non-positive radius")));
        }
        let dist = (a.center[0].powi(2) + a.center[1].powi(2)).sqrt();
        if dist + a.radius > mesh.radius * (1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "anomaly {i} extends outside the disk"
            )));
        }
    }
    let mut values = vec![phantom.background; mesh.element_count()];
    for a in &phantom.anomalies {
        let r2 = a.radius * a.radius;
        for t in 0..mesh.element_count() {
            let c = mesh.centroid(t);
            let dx = c[0] - a.center[0];
            let dy = c[1] - a.center[1];
            if dx * dx + dy * dy < r2 {
                values[t] = a.conductivity;
            }
        }
    }
    Conductivity::new(values)
}

/// Parametric anomaly path over the frames of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// The same phantom in every frame.
    Static { phantom: Phantom },
    /// Anomaly center orbits the disk center.
    Orbit {
        background: f64,
        orbit_radius: f64,
        anomaly_radius: f64,
        conductivity: f64,
        /// Full revolutions over the session.
        turns: f64,
    },
    /// Anomaly center sweeps a line segment.
    Sweep {
        background: f64,
        from: [f64; 2],
        to: [f64; 2],
        anomaly_radius: f64,
        conductivity: f64,
    },
    /// Piecewise-static pose sequence, frames split evenly across poses.
    Poses { phantoms: Vec<Phantom> },
}

impl Trajectory {
    pub fn phantom_at(&self, frame: usize, frame_count: usize) -> Result<Phantom> {
        let t = if frame_count > 1 {
            frame as f64 / (frame_count - 1) as f64
        } else {
            0.0
        };
        match self {
            Trajectory::Static { phantom } => Ok(phantom.clone()),
            Trajectory::Orbit { background, orbit_radius, anomaly_radius, conductivity, turns } => {
                let angle = 2.0 * std::f64::consts::PI * turns * t;
                Ok(Phantom {
                    background: *background,
                    anomalies: vec![Anomaly {
                        center: [orbit_radius * angle.cos(), orbit_radius * angle.sin()],
                        radius: *anomaly_radius,
                        conductivity: *conductivity,
                    }],
                })
            }
            Trajectory::Sweep { background, from, to, anomaly_radius, conductivity } => Ok(Phantom {
                background: *background,
                anomalies: vec![Anomaly {
                    center: [
                        from[0] + (to[0] - from[0]) * t,
                        from[1] + (to[1] - from[1]) * t,
                    ],
                    radius: *anomaly_radius,
                    conductivity: *conductivity,
                }],
            }),
            Trajectory::Poses { phantoms } => {
                if phantoms.is_empty() {
                    return Err(Error::InvalidParameter("pose trajectory has no phantoms".into()));
                }
                let idx = (frame * phantoms.len() / frame_count).min(phantoms.len() - 1);
                Ok(phantoms[idx].clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub frame_count: usize,
    pub trajectory: Trajectory,
    /// Log-normal σ of the per-frame, per-electrode contact impedance jitter.
    #[serde(default = "default_contact_noise")]
    pub contact_noise: f64,
    /// Additive Gaussian noise std on each measurement.
    #[serde(default)]
    pub sensor_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_contact_noise() -> f64 {
    0.2
}

impl SessionSpec {
    fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidParameter("frame_count must be at least 1".into()));
        }
        if self.contact_noise < 0.0 || self.sensor_noise < 0.0 {
            return Err(Error::InvalidParameter("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// A generated session: noisy frames plus the noiseless ground truth (the
/// same physical frames, contact jitter included, sensor noise excluded).
#[derive(Debug, Clone)]
pub struct Session {
    pub noisy: SnapshotMatrix,
    pub truth: SnapshotMatrix,
}

pub fn simulate_session(
    mesh: &Mesh,
    layout: &ElectrodeLayout,
    protocol: &Protocol,
    spec: &SessionSpec,
) -> Result<Session> {
    spec.validate()?;
    let geom = fem::MeshGeometry::new(mesh)?;
    let d = protocol.len();
    let n = spec.frame_count;

    let frames: Result<Vec<(DVector<f64>, DVector<f64>)>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(t as u64 + 1);
            let phantom = spec.trajectory.phantom_at(t, n)?;
            let sigma = make_phantom(&phantom, mesh)?;

            let mut frame_layout = layout.clone();
            if spec.contact_noise > 0.0 {
                let jitter = Normal::new(0.0, spec.contact_noise)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for z in &mut frame_layout.contact_impedance {
                    *z *= jitter.sample(&mut rng).exp();
                }
            }
            let truth =
                fem::solve_forward_with_geometry(mesh, &geom, &sigma, &frame_layout, protocol, 1.0)?;
            let mut noisy = truth.clone();
            if spec.sensor_noise > 0.0 {
                let noise = Normal::new(0.0, spec.sensor_noise)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for v in noisy.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            Ok((noisy, truth))
        })
        .collect();
    let frames = frames?;

    let noisy = DMatrix::from_fn(d, n, |r, c| frames[c].0[r]);
    let truth = DMatrix::from_fn(d, n, |r, c| frames[c].1[r]);
    let id = protocol.id();
    Ok(Session {
        noisy: SnapshotMatrix::new(noisy, id.clone())?,
        truth: SnapshotMatrix::new(truth, id)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultModel {
    /// Remove the affected measurements entirely (rows shrink to `D'`).
    Drop,
    /// Keep full-length frames with affected entries zeroed.
    Zero,
    /// Keep full-length frames with affected entries pinned to a rail value.
    Saturate,
}

#[derive(Debug, Clone)]
pub struct FaultedFrames {
    /// `D' × n` for [`FaultModel::Drop`], `D × n` otherwise.
    pub frames: DMatrix<f64>,
    /// Valid measurement indices under the bad set, in protocol order.
    pub valid_indices: Vec<usize>,
    pub model: FaultModel,
}

/// Applies an electrode fault model to every frame of a snapshot matrix.
pub fn inject_fault(
    snapshots: &SnapshotMatrix,
    protocol: &Protocol,
    bad_electrodes: &BTreeSet<usize>,
    model: FaultModel,
) -> Result<FaultedFrames> {
    if snapshots.frame_len() != protocol.len() {
        return Err(Error::Dimension(format!(
            "frames have length {}, protocol has D={}",
            snapshots.frame_len(),
            protocol.len()
        )));
    }
    let valid_indices = protocol.valid_subset(bad_electrodes)?;
    let n = snapshots.frame_count();
    let frames = match model {
        FaultModel::Drop => DMatrix::from_fn(valid_indices.len(), n, |r, c| {
            snapshots.frames[(valid_indices[r], c)]
        }),
        FaultModel::Zero | FaultModel::Saturate => {
            let rail = match model {
                FaultModel::Saturate => 10.0 * snapshots.frames.amax(),
                _ => 0.0,
            };
            let valid: Vec<bool> = {
                let mut v = vec![false; protocol.len()];
                for &i in &valid_indices {
                    v[i] = true;
                }
                v
            };
            DMatrix::from_fn(protocol.len(), n, |r, c| {
                if valid[r] {
                    snapshots.frames[(r, c)]
                } else {
                    rail
                }
            })
        }
    };
    Ok(FaultedFrames { frames, valid_indices, model })
}
