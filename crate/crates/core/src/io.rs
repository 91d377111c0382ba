//! On-disk artifact formats.
//!
//! JSON for structured artifacts (mesh, protocol, basis, placement report),
//! CSV for measurement frames, and a small binary container for Jacobians.
//! Every frame and basis file is stamped with the short content hash of the
//! protocol it was produced under so downstream commands can refuse to mix
//! artifacts from different protocols.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fem::{Conductivity, Jacobian};
use crate::mesh::Mesh;
use crate::placement::PlacementScore;
use crate::pod::{PodBasis, SnapshotMatrix};
use crate::protocol::{Measurement, Protocol};
use crate::{Error, Result};

/// Short content hash (first 12 hex chars of SHA-256) used to stamp artifacts.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(12);
    for b in digest.iter().take(6) {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(mesh)?)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let mesh: Mesh = serde_json::from_slice(&fs::read(path)?)?;
    mesh.validate()?;
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// Protocol
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ProtocolWire {
    electrode_count: usize,
    measurements: Vec<[usize; 4]>,
}

pub fn write_protocol(path: &Path, protocol: &Protocol) -> Result<()> {
    let wire = ProtocolWire {
        electrode_count: protocol.electrode_count,
        measurements: protocol.measurements.iter().map(|m| m.electrodes()).collect(),
    };
    fs::write(path, serde_json::to_vec_pretty(&wire)?)?;
    Ok(())
}

pub fn read_protocol(path: &Path) -> Result<Protocol> {
    let wire: ProtocolWire = serde_json::from_slice(&fs::read(path)?)?;
    let measurements: Vec<Measurement> = wire
        .measurements
        .iter()
        .map(|&[a, b, c, d]| Measurement { drive: (a, b), sense: (c, d) })
        .collect();
    let onsager_partner = measurements
        .iter()
        .map(|m| {
            measurements
                .iter()
                .position(|p| p.drive == m.sense && p.sense == m.drive)
        })
        .collect();
    let protocol = Protocol {
        electrode_count: wire.electrode_count,
        measurements,
        onsager_partner,
    };
    protocol.validate()?;
    Ok(protocol)
}

// ---------------------------------------------------------------------------
// POD basis
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BasisWire {
    protocol_id: String,
    centered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    eigenvalues: Vec<f64>,
    /// Column-major: one inner array per mode.
    modes: Vec<Vec<f64>>,
}

impl From<&PodBasis> for BasisWire {
    fn from(basis: &PodBasis) -> Self {
        BasisWire {
            protocol_id: basis.protocol_id.clone(),
            centered: basis.centered,
            mean: basis.mean.as_ref().map(|m| m.iter().copied().collect()),
            eigenvalues: basis.eigenvalues.clone(),
            modes: basis
                .modes
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }
}

/// Canonical serialized form of a basis; also the byte stream its id hashes.
pub fn basis_json_bytes(basis: &PodBasis) -> Vec<u8> {
    serde_json::to_vec(&BasisWire::from(basis)).expect("basis serializes")
}

pub fn write_basis(path: &Path, basis: &PodBasis) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(&BasisWire::from(basis))?)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<PodBasis> {
    let wire: BasisWire = serde_json::from_slice(&fs::read(path)?)?;
    if wire.modes.is_empty() {
        return Err(Error::Format("basis file holds no modes".into()));
    }
    let d = wire.modes[0].len();
    if wire.modes.iter().any(|m| m.len() != d) {
        return Err(Error::Format("basis modes have inconsistent lengths".into()));
    }
    if wire.eigenvalues.len() != wire.modes.len() {
        return Err(Error::Format("eigenvalue count differs from mode count".into()));
    }
    let modes = DMatrix::from_fn(d, wire.modes.len(), |r, c| wire.modes[c][r]);
    Ok(PodBasis {
        modes,
        eigenvalues: wire.eigenvalues,
        mean: wire.mean.map(DVector::from_vec),
        centered: wire.centered,
        protocol_id: wire.protocol_id,
    })
}

// ---------------------------------------------------------------------------
// Snapshot CSV
// ---------------------------------------------------------------------------

/// Frames are rows; the first line is a `# key=value ...` metadata comment
/// carrying at least `protocol_id` and `electrode_count`, the second a
/// `d0,d1,...` header.
pub fn write_snapshots(
    path: &Path,
    snapshots: &SnapshotMatrix,
    extra_meta: &BTreeMap<String, String>,
) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut meta = format!("# protocol_id={}", snapshots.protocol_id);
    for (k, v) in extra_meta {
        meta.push_str(&format!(" {k}={v}"));
    }
    writeln!(w, "{meta}")?;
    let header: Vec<String> = (0..snapshots.frame_len()).map(|i| format!("d{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for col in snapshots.frames.column_iter() {
        let row: Vec<String> = col.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_snapshots(path: &Path) -> Result<(SnapshotMatrix, BTreeMap<String, String>)> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty snapshot file".into()))?;
    if !meta_line.starts_with('#') {
        return Err(Error::Format("snapshot file is missing its metadata line".into()));
    }
    let mut meta = BTreeMap::new();
    for token in meta_line.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = token.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let protocol_id = meta
        .get("protocol_id")
        .ok_or_else(|| Error::Format("snapshot metadata lacks protocol_id".into()))?
        .clone();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("snapshot file is missing its header row".into()))?;
    let width = header.split(',').count();

    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("bad number {field:?} on data row {}", lineno + 1))
            })?;
            data.push(v);
            count += 1;
        }
        if count != width {
            return Err(Error::Format(format!(
                "row {} has {count} fields, header has {width}",
                lineno + 1
            )));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format("snapshot file holds no frames".into()));
    }
    // Rows in the file are frames; frames are columns in memory.
    let frames = DMatrix::from_fn(width, rows, |r, c| data[c * width + r]);
    Ok((SnapshotMatrix::new(frames, protocol_id)?, meta))
}

// ---------------------------------------------------------------------------
// Placement report
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScoreWire {
    slots: Vec<usize>,
    /// `null` flags a rank-deficient candidate (log score −∞).
    log_score: Option<f64>,
    rank: usize,
}

pub fn write_placement_report(path: &Path, scores: &[PlacementScore]) -> Result<()> {
    let wire: Vec<ScoreWire> = scores
        .iter()
        .map(|s| ScoreWire {
            slots: s.selected_slots.clone(),
            log_score: if s.log_score.is_finite() { Some(s.log_score) } else { None },
            rank: s.rank,
        })
        .collect();
    fs::write(path, serde_json::to_vec_pretty(&wire)?)?;
    Ok(())
}

pub fn read_placement_report(path: &Path) -> Result<Vec<PlacementScore>> {
    let wire: Vec<ScoreWire> = serde_json::from_slice(&fs::read(path)?)?;
    Ok(wire
        .into_iter()
        .map(|s| PlacementScore {
            selected_slots: s.slots,
            log_score: s.log_score.unwrap_or(f64::NEG_INFINITY),
            rank: s.rank,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Jacobian binary
// ---------------------------------------------------------------------------

const JACOBIAN_MAGIC: &str = "EITJAC1";

#[derive(Serialize, Deserialize)]
struct JacobianHeader {
    rows: usize,
    cols: usize,
    protocol_id: String,
    layout_id: String,
    mesh: Mesh,
}

/// Binary Jacobian container: a magic line, a JSON header line (embedding the
/// mesh so renders are self-contained), then `rows*cols` matrix entries and
/// `cols` background conductivities as little-endian f64.
pub fn write_jacobian(path: &Path, jacobian: &Jacobian, mesh: &Mesh) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{JACOBIAN_MAGIC}")?;
    let header = JacobianHeader {
        rows: jacobian.rows(),
        cols: jacobian.cols(),
        protocol_id: jacobian.protocol_id.clone(),
        layout_id: jacobian.layout_id.clone(),
        mesh: mesh.clone(),
    };
    let mut header_bytes = serde_json::to_vec(&header)?;
    header_bytes.push(b'\n');
    w.write_all(&header_bytes)?;
    for r in 0..jacobian.rows() {
        for c in 0..jacobian.cols() {
            w.write_all(&jacobian.matrix[(r, c)].to_le_bytes())?;
        }
    }
    for &v in jacobian.background.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_jacobian(path: &Path) -> Result<(Jacobian, Mesh)> {
    let bytes = fs::read(path)?;
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("jacobian file truncated before magic".into()))?;
    if &bytes[..first_nl] != JACOBIAN_MAGIC.as_bytes() {
        return Err(Error::Format("not a jacobian file (bad magic)".into()));
    }
    let rest = &bytes[first_nl + 1..];
    let header_nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("jacobian file truncated before header".into()))?;
    let header: JacobianHeader = serde_json::from_slice(&rest[..header_nl])?;
    header.mesh.validate()?;
    let payload = &rest[header_nl + 1..];
    let need = (header.rows * header.cols + header.cols) * 8;
    if payload.len() != need {
        return Err(Error::Format(format!(
            "jacobian payload is {} bytes, expected {need}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let matrix = DMatrix::from_fn(header.rows, header.cols, |_, _| 0.0);
    let mut matrix = matrix;
    for r in 0..header.rows {
        for c in 0..header.cols {
            matrix[(r, c)] = values.next().unwrap();
        }
    }
    let background = Conductivity::new(values.collect())?;
    Ok((
        Jacobian {
            matrix,
            background,
            protocol_id: header.protocol_id,
            layout_id: header.layout_id,
        },
        header.mesh,
    ))
}
