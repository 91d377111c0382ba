//! Command-line pipeline: mesh building, session simulation, POD fitting,
//! placement search, dropout projection, evaluation, and SVG rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure. Relative output paths are placed under `$EITKIT_OUT_DIR` when it
//! is set. Every artifact embeds the protocol hash it was produced under;
//! commands that combine artifacts refuse hash mismatches.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::fem::{self, Conductivity};
use crate::mesh::{self, ElectrodeLayout};
use crate::placement::{self, ScoreMethod, SearchOptions};
use crate::pod;
use crate::projection;
use crate::protocol;
use crate::render::{render_mesh_fields, symmetric_range, RenderSpec};
use crate::report;
use crate::synth::{self, SessionSpec, Trajectory};
use crate::{io, Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "EITKIT_OUT_DIR";

#[derive(Parser)]
#[command(name = "eitkit", version, about = "EIT measurement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a triangulated disk mesh and write it as JSON.
    Mesh(MeshArgs),
    /// Simulate a synthetic measurement session.
    Simulate(SimulateArgs),
    /// Fit a POD basis from a snapshot CSV.
    Pod(PodArgs),
    /// Exhaustive electrode placement search.
    Place(PlaceArgs),
    /// Project frames with bad electrodes back to full rank.
    Project(ProjectArgs),
    /// Compare projected frames against ground truth.
    Eval(EvalArgs),
    /// Render mesh projections of POD modes as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 64)]
    segments: usize,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Mesh file; built on the fly with defaults when omitted.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Electrode slot count of the band.
    #[arg(long, default_value_t = 8)]
    slots: usize,
    /// Comma-separated selected slots; all slots when omitted.
    #[arg(long = "use")]
    use_slots: Option<String>,
    /// Electrode arc half-width in radians; defaults to half the slot pitch.
    #[arg(long)]
    arc: Option<f64>,
    /// Session spec JSON file; inline flags below are used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    /// Trajectory kind for the inline spec: orbit, sweep, or static.
    #[arg(long, default_value = "orbit")]
    trajectory: String,
    #[arg(long, default_value_t = 0.2)]
    contact_noise: f64,
    #[arg(long, default_value_t = 1e-4)]
    sensor_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noisy frames CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth (noiseless) frames CSV.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Homogeneous-background Jacobian of the layout (binary, embeds the mesh).
    #[arg(long)]
    jacobian_out: Option<PathBuf>,
}

#[derive(Args)]
struct PodArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mean-center the snapshots before decomposition.
    #[arg(long)]
    center: bool,
    /// Mode count to keep; full rank when omitted.
    #[arg(long)]
    modes: Option<usize>,
}

#[derive(Args)]
struct PlaceArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    basis: PathBuf,
    /// Candidate slot count on the boundary.
    #[arg(long, default_value_t = 16)]
    slots: usize,
    /// Electrodes per candidate.
    #[arg(long, default_value_t = 8)]
    select: usize,
    /// POD truncation P.
    #[arg(long, default_value_t = 20)]
    modes: usize,
    /// Electrode count of the evenly spaced reference band the basis data
    /// was collected with.
    #[arg(long, default_value_t = 8)]
    reference_count: usize,
    /// Candidate electrode arc half-width; defaults to half the slot pitch.
    #[arg(long)]
    arc: Option<f64>,
    /// Scoring determinant: "pod" (Gram in POD coordinates) or "data".
    #[arg(long, default_value = "pod")]
    method: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the reference Jacobian (binary, embeds the mesh).
    #[arg(long)]
    jacobian_out: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    basis: PathBuf,
    /// Comma-separated bad electrode indices.
    #[arg(long)]
    bad: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Truncate tiny singular values instead of failing on conditioning.
    #[arg(long)]
    regularize: bool,
    /// Use fewer than D' modes with a least-squares solve.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long, default_value_t = projection::DEFAULT_CONDITION_LIMIT)]
    condition_limit: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    projected: PathBuf,
    /// Optional JSON report output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    basis: PathBuf,
    #[arg(long)]
    jacobian: PathBuf,
    /// Comma-separated 1-based mode numbers to draw.
    #[arg(long, default_value = "1,2,3")]
    modes: String,
    /// Panel pixel size.
    #[arg(long, default_value_t = 300)]
    size: u32,
    /// Symmetric color range; the shared max magnitude when omitted.
    #[arg(long)]
    range: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is usage.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => 1,
        Error::Singular(_) | Error::IllConditioned { .. } => 3,
        _ => 2,
    }
}

fn out_path(p: &Path) -> PathBuf {
    if p.is_relative() {
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            return PathBuf::from(dir).join(p);
        }
    }
    p.to_path_buf()
}

fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(&[',', ';'][..])
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad index {tok:?} in list {s:?}")))
        })
        .collect()
}

fn format_index_list(v: &BTreeSet<usize>) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn layout_from_args(slots: usize, use_slots: &Option<String>, arc: Option<f64>) -> Result<ElectrodeLayout> {
    let selected: BTreeSet<usize> = match use_slots {
        Some(s) => parse_index_list(s)?.into_iter().collect(),
        None => (0..slots).collect(),
    };
    let arc = arc.unwrap_or_else(|| mesh::default_arc_half_width(slots));
    mesh::layout_from_slots(slots, &selected, arc)
}

fn electrode_count_from_meta(meta: &BTreeMap<String, String>) -> Result<usize> {
    meta.get("electrode_count")
        .ok_or_else(|| Error::Format("snapshot metadata lacks electrode_count".into()))?
        .parse()
        .map_err(|_| Error::Format("bad electrode_count in snapshot metadata".into()))
}

/// Rebuilds the skip protocol named by a snapshot file's metadata and checks
/// its hash against the stamped protocol id.
fn protocol_from_meta(meta: &BTreeMap<String, String>, stamped: &str) -> Result<protocol::Protocol> {
    let c = electrode_count_from_meta(meta)?;
    let p = protocol::skip_protocol(c)?;
    if p.id() != stamped {
        return Err(Error::Mismatch(format!(
            "frames stamped with protocol {stamped}, but the {c}-electrode skip protocol hashes to {}",
            p.id()
        )));
    }
    Ok(p)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Mesh(a) => run_mesh(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Pod(a) => run_pod(a),
        Command::Place(a) => run_place(a),
        Command::Project(a) => run_project(a),
        Command::Eval(a) => run_eval(a),
        Command::Render(a) => run_render(a),
    }
}

fn run_mesh(a: MeshArgs) -> Result<()> {
    let mesh = mesh::build_disk_mesh(a.radius, a.segments, a.density)?;
    io::write_mesh(&out_path(&a.out), &mesh)?;
    println!(
        "mesh: {} nodes, {} elements -> {}",
        mesh.node_count(),
        mesh.element_count(),
        out_path(&a.out).display()
    );
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let mesh = match &a.mesh {
        Some(path) => io::read_mesh(path)?,
        None => mesh::build_disk_mesh(1.0, 64, 1.0)?,
    };
    let layout = layout_from_args(a.slots, &a.use_slots, a.arc)?;
    let proto = protocol::skip_protocol(layout.electrode_count())?;
    let spec: SessionSpec = match &a.spec {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => {
            let trajectory = match a.trajectory.as_str() {
                "orbit" => Trajectory::Orbit {
                    background: 1.0,
                    orbit_radius: 0.5 * mesh.radius,
                    anomaly_radius: 0.25 * mesh.radius,
                    conductivity: 3.0,
                    turns: 1.0,
                },
                "sweep" => Trajectory::Sweep {
                    background: 1.0,
                    from: [-0.5 * mesh.radius, 0.0],
                    to: [0.5 * mesh.radius, 0.0],
                    anomaly_radius: 0.25 * mesh.radius,
                    conductivity: 3.0,
                },
                "static" => Trajectory::Static {
                    phantom: synth::Phantom { background: 1.0, anomalies: vec![] },
                },
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown trajectory {other:?} (expected orbit, sweep, or static)"
                    )))
                }
            };
            SessionSpec {
                frame_count: a.frames,
                trajectory,
                contact_noise: a.contact_noise,
                sensor_noise: a.sensor_noise,
                seed: a.seed,
            }
        }
    };
    let session = synth::simulate_session(&mesh, &layout, &proto, &spec)?;

    let mut meta = BTreeMap::new();
    meta.insert("electrode_count".into(), layout.electrode_count().to_string());
    meta.insert("seed".into(), spec.seed.to_string());
    let mut noisy_meta = meta.clone();
    noisy_meta.insert("kind".into(), "noisy".into());
    io::write_snapshots(&out_path(&a.out), &session.noisy, &noisy_meta)?;
    println!(
        "session: {} frames of {} measurements -> {}",
        session.noisy.frame_count(),
        session.noisy.frame_len(),
        out_path(&a.out).display()
    );
    if let Some(truth_out) = &a.truth_out {
        let mut truth_meta = meta.clone();
        truth_meta.insert("kind".into(), "truth".into());
        io::write_snapshots(&out_path(truth_out), &session.truth, &truth_meta)?;
    }
    if let Some(jac_out) = &a.jacobian_out {
        let sigma = Conductivity::homogeneous(1.0, mesh.element_count())?;
        let jac = fem::compute_jacobian(&mesh, &sigma, &layout, &proto)?;
        io::write_jacobian(&out_path(jac_out), &jac, &mesh)?;
    }
    Ok(())
}

fn run_pod(a: PodArgs) -> Result<()> {
    let (snapshots, _meta) = io::read_snapshots(&a.input)?;
    let max_modes = a
        .modes
        .unwrap_or_else(|| snapshots.frame_len().min(snapshots.frame_count()));
    let basis = pod::fit_pod(&snapshots, a.center, max_modes)?;
    io::write_basis(&out_path(&a.out), &basis)?;
    println!(
        "basis: {} modes over D={} (leading eigenvalue {:.4e}) -> {}",
        basis.mode_count(),
        basis.frame_len(),
        basis.eigenvalues.first().copied().unwrap_or(0.0),
        out_path(&a.out).display()
    );
    Ok(())
}

fn run_place(a: PlaceArgs) -> Result<()> {
    let mesh = io::read_mesh(&a.mesh)?;
    let basis = io::read_basis(&a.basis)?;
    let reference = mesh::layout_from_slots(
        a.reference_count,
        &(0..a.reference_count).collect(),
        mesh::default_arc_half_width(a.reference_count),
    )?;
    let method = match a.method.as_str() {
        "pod" => ScoreMethod::GramInPod,
        "data" => ScoreMethod::GramInData,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown scoring method {other:?} (expected pod or data)"
            )))
        }
    };
    if let Some(jac_out) = &a.jacobian_out {
        let proto = protocol::skip_protocol(a.reference_count)?;
        let sigma = Conductivity::homogeneous(1.0, mesh.element_count())?;
        let jac = fem::compute_jacobian(&mesh, &sigma, &reference, &proto)?;
        io::write_jacobian(&out_path(jac_out), &jac, &mesh)?;
    }
    let options = SearchOptions { electrode_arc: a.arc, method };
    let scores =
        placement::optimize_placement(&mesh, &basis, &reference, a.slots, a.select, a.modes, &options)?;
    io::write_placement_report(&out_path(&a.out), &scores)?;
    let best = &scores[0];
    println!(
        "searched {} candidates; best slots {:?} with log score {:.6} -> {}",
        scores.len(),
        best.selected_slots,
        best.log_score,
        out_path(&a.out).display()
    );
    Ok(())
}

fn run_project(a: ProjectArgs) -> Result<()> {
    let basis = io::read_basis(&a.basis)?;
    let (snapshots, meta) = io::read_snapshots(&a.input)?;
    let proto = protocol_from_meta(&meta, &snapshots.protocol_id)?;
    if basis.protocol_id != snapshots.protocol_id {
        return Err(Error::Mismatch(format!(
            "basis protocol {} does not match frames protocol {}",
            basis.protocol_id, snapshots.protocol_id
        )));
    }
    let bad: BTreeSet<usize> = parse_index_list(&a.bad)?.into_iter().collect();
    let opts = projection::BuildOptions {
        condition_limit: a.condition_limit,
        regularize: a.regularize,
        mode_count: a.modes,
    };
    let op = projection::build_projector(&basis, &proto, &bad, &opts)?;

    let mut projected = snapshots.frames.clone();
    for c in 0..snapshots.frame_count() {
        let frame = snapshots.frame(c);
        let lifted = projection::apply_projector(&op, &op.restrict(&frame)?)?;
        projected.set_column(c, &lifted);
    }
    let out = pod::SnapshotMatrix::new(projected, snapshots.protocol_id.clone())?;

    let mut out_meta = BTreeMap::new();
    out_meta.insert("electrode_count".into(), proto.electrode_count.to_string());
    out_meta.insert("kind".into(), "projected".into());
    out_meta.insert("basis".into(), op.basis_id.clone());
    out_meta.insert("bad".into(), format_index_list(&bad));
    io::write_snapshots(&out_path(&a.out), &out, &out_meta)?;
    println!(
        "projected {} frames (D'={}, condition {:.3e}) -> {}",
        out.frame_count(),
        op.reduced_len(),
        op.condition,
        out_path(&a.out).display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let (truth, truth_meta) = io::read_snapshots(&a.truth)?;
    let (projected, proj_meta) = io::read_snapshots(&a.projected)?;
    // Both files must come from the same protocol.
    let proto = protocol_from_meta(&truth_meta, &truth.protocol_id)?;
    let invalid: Option<Vec<usize>> = match proj_meta.get("bad") {
        Some(bad_str) => {
            let bad: BTreeSet<usize> = parse_index_list(bad_str)?.into_iter().collect();
            if bad.is_empty() {
                None
            } else {
                let valid: BTreeSet<usize> = proto.valid_subset(&bad)?.into_iter().collect();
                Some((0..proto.len()).filter(|i| !valid.contains(i)).collect())
            }
        }
        None => None,
    };
    let report = report::eval_projection(&truth, &projected, invalid.as_deref())?;
    print!("{report}");
    if let Some(out) = &a.out {
        std::fs::write(out_path(out), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}

fn run_render(a: RenderArgs) -> Result<()> {
    let basis = io::read_basis(&a.basis)?;
    let (jacobian, mesh) = io::read_jacobian(&a.jacobian)?;
    if jacobian.protocol_id != basis.protocol_id {
        return Err(Error::Mismatch(format!(
            "jacobian protocol {} does not match basis protocol {}",
            jacobian.protocol_id, basis.protocol_id
        )));
    }
    let modes = parse_index_list(&a.modes)?;
    if modes.is_empty() || modes.iter().any(|&m| m == 0) {
        return Err(Error::InvalidParameter("mode numbers are 1-based and non-empty".into()));
    }
    let p = modes.iter().copied().max().unwrap();
    let phi_m = placement::mesh_pod(&jacobian, &basis, p)?;
    let fields: Vec<(String, DVector<f64>)> = modes
        .iter()
        .map(|&m| (format!("mesh mode {m}"), phi_m.matrix.column(m - 1).into_owned()))
        .collect();
    let range = match a.range {
        Some(r) => r,
        None => {
            let vals: Vec<DVector<f64>> = fields.iter().map(|(_, f)| f.clone()).collect();
            symmetric_range(&vals)
        }
    };
    let spec = RenderSpec { color_range: range, panel_size: a.size, panel_modes: modes };
    let svg = render_mesh_fields(&mesh, &fields, &spec)?;
    std::fs::write(out_path(&a.out), svg)?;
    println!(
        "rendered {} panels with shared range {:.4e} -> {}",
        fields.len(),
        range,
        out_path(&a.out).display()
    );
    Ok(())
}
