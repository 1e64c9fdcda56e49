//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns a JSON summary for stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use sbreach::dynamics::{
    propagate, propagate_to_section, write_events_csv, write_trajectory_csv, AsteroidParams, DynamicsError,
    PropagationOptions, State,
};
use sbreach::gravity::{evaluate_field, GravityError, GravityModel};
use sbreach::poincare::{
    correct_periodic_orbit, project_to_section, write_catalog, CatalogEntry, CorrectorOptions, PeriodicOrbit,
    PoincareError,
};
use sbreach::reachability::{
    matching_crossing, plan_transfer, sweep_reachable_set, write_distance_csv, write_plan, write_reachable_set_csv,
    PlanError, ReachError, ReachableSet,
};
use sbreach::shape::primitives::{castalia_surrogate, GridResolution};
use sbreach::shape::{
    precompute_geometry, read_cache, read_mesh, shape_digest, validate_shape, write_cache, ShapeError, ShapeModel,
    TriMesh,
};

use crate::config::{ConfigError, RunConfig, Surrogate};

/// Error class, which fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad arguments, configuration or input data.
    Usage,
    Numerical,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Numerical => 2,
            ErrorKind::Io => 3,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    fn io(context: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {e}", context.display()))
    }

    fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> Value {
        json!({
            "error": self.kind,
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
    }
}

fn shape_kind(e: &ShapeError) -> ErrorKind {
    match e {
        ShapeError::Io { .. } | ShapeError::Cache(_) => ErrorKind::Io,
        _ => ErrorKind::Usage,
    }
}

fn gravity_kind(e: &GravityError) -> ErrorKind {
    match e {
        GravityError::Shape(s) => shape_kind(s),
        GravityError::InvalidDensity(_) => ErrorKind::Usage,
        GravityError::EdgeSingularity { .. } => ErrorKind::Numerical,
    }
}

fn dynamics_kind(e: &DynamicsError) -> ErrorKind {
    match e {
        DynamicsError::Gravity(g) => gravity_kind(g),
        DynamicsError::InvalidSpinRate(_) => ErrorKind::Usage,
        DynamicsError::Io(_) => ErrorKind::Io,
        _ => ErrorKind::Numerical,
    }
}

fn poincare_kind(e: &PoincareError) -> ErrorKind {
    match e {
        PoincareError::Dynamics(d) => dynamics_kind(d),
        PoincareError::Gravity(g) => gravity_kind(g),
        PoincareError::NotOnSection { .. } => ErrorKind::Usage,
        PoincareError::Catalog(_) => ErrorKind::Io,
        _ => ErrorKind::Numerical,
    }
}

fn reach_kind(e: &ReachError) -> ErrorKind {
    match e {
        ReachError::Dynamics(d) => dynamics_kind(d),
        ReachError::Poincare(p) => poincare_kind(p),
        ReachError::InvalidProblem(_) => ErrorKind::Usage,
        ReachError::Io(_) => ErrorKind::Io,
        _ => ErrorKind::Numerical,
    }
}

macro_rules! from_error {
    ($t:ty, $kind:expr) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind(&e), e.to_string())
            }
        }
    };
}

from_error!(ShapeError, shape_kind);
from_error!(GravityError, gravity_kind);
from_error!(DynamicsError, dynamics_kind);
from_error!(PoincareError, poincare_kind);
from_error!(ReachError, reach_kind);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Io { .. } => ErrorKind::Io,
            ConfigError::Schema { .. } => ErrorKind::Usage,
        };
        CliError::new(kind, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    ValidateShape,
    Gravity {
        point: Vector3<f64>,
    },
    Propagate {
        /// Defaults to the configured initial state.
        state: Option<[f64; 6]>,
        /// Fixed span in seconds; otherwise runs until `crossings` section
        /// crossings.
        duration: Option<f64>,
        crossings: usize,
    },
    Periodic,
    Sweep,
    Transfer,
}

/// Runs one command and returns its stdout summary.
pub fn execute(cmd: &Command, cfg: &RunConfig) -> Result<Value, CliError> {
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match cmd {
        Command::ValidateShape => validate(cfg),
        Command::Gravity { point } => gravity(cfg, point),
        Command::Propagate {
            state,
            duration,
            crossings,
        } => propagate_cmd(cfg, state.unwrap_or(cfg.initial_state), *duration, *crossings),
        Command::Periodic => periodic(cfg),
        Command::Sweep => sweep(cfg),
        Command::Transfer => transfer(cfg),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::io(path, e))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| CliError::io(path, e))
}

fn surrogate_mesh(s: Surrogate) -> TriMesh {
    castalia_surrogate(match s {
        Surrogate::Reduced => GridResolution::REDUCED,
        Surrogate::Full => GridResolution::FULL,
    })
}

fn raw_mesh(cfg: &RunConfig) -> Result<TriMesh, CliError> {
    match &cfg.shape {
        Some(src) => Ok(read_mesh(src)?),
        None => Ok(surrogate_mesh(cfg.surrogate)),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Geometry cache file for `shape` under `dir`.
pub fn cache_path(dir: &Path, shape: &ShapeModel) -> PathBuf {
    dir.join(format!("{}.geom", hex(&shape_digest(shape))))
}

/// Gravity model for the configured shape, reading or filling the geometry
/// cache when one is configured. A stale or corrupt cache entry is rebuilt.
pub fn gravity_model(cfg: &RunConfig) -> Result<GravityModel, CliError> {
    let shape = ShapeModel::new(raw_mesh(cfg)?)?;
    let geometry = match &cfg.cache {
        Some(dir) => {
            let path = cache_path(dir, &shape);
            match read_cache(&path, &shape) {
                Ok(g) => {
                    log::info!("geometry cache hit {}", path.display());
                    g
                }
                Err(e) => {
                    if path.exists() {
                        log::warn!("rebuilding geometry cache {}: {e}", path.display());
                    }
                    let g = precompute_geometry(&shape)?;
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                    write_cache(&path, &shape, &g)?;
                    g
                }
            }
        }
        None => precompute_geometry(&shape)?,
    };
    Ok(GravityModel::with_geometry(shape, geometry, cfg.density())?)
}

pub fn params(cfg: &RunConfig) -> Result<AsteroidParams, CliError> {
    Ok(AsteroidParams::new(Arc::new(gravity_model(cfg)?), cfg.spin_rate())?)
}

fn validate(cfg: &RunConfig) -> Result<Value, CliError> {
    let mesh = raw_mesh(cfg)?;
    let report = validate_shape(&mesh);
    let path = cfg.output.join("validation_report.json");
    write_json(
        &path,
        &json!({
            "vertices": mesh.vertices.len(),
            "faces": mesh.faces.len(),
            "valid": report.is_empty(),
            "report": report,
        }),
    )?;
    if !report.is_empty() {
        return Err(CliError::usage(format!(
            "shape has {} issue(s); see {}",
            report.issues.len(),
            path.display()
        )));
    }
    Ok(json!({
        "valid": true,
        "vertices": mesh.vertices.len(),
        "faces": mesh.faces.len(),
        "report": path,
    }))
}

fn gravity(cfg: &RunConfig, point: &Vector3<f64>) -> Result<Value, CliError> {
    let model = gravity_model(cfg)?;
    let f = evaluate_field(point, &model)?;
    let value = json!({
        "point": [point.x, point.y, point.z],
        "potential": f.potential,
        "gradient": [f.gradient.x, f.gradient.y, f.gradient.z],
        "hessian": f.hessian.row_iter().map(|r| [r[0], r[1], r[2]]).collect::<Vec<_>>(),
        "laplacian": f.laplacian,
    });
    write_json(&cfg.output.join("gravity.json"), &value)?;
    Ok(value)
}

fn propagation(cfg: &RunConfig) -> PropagationOptions {
    PropagationOptions::tolerance(cfg.propagation_tol)
}

/// `x,xdot` and `z,zdot` projections of section points, one file each.
fn write_section_csvs<'a>(
    dir: &Path,
    prefix: &str,
    points: impl Iterator<Item = (Vec<String>, [f64; 4])> + Clone + 'a,
    label: &[&str],
) -> Result<(), CliError> {
    for (name, a, b, cols) in [
        ("section_xxdot.csv", 0, 1, ["x", "xdot"]),
        ("section_zzdot.csv", 2, 3, ["z", "zdot"]),
    ] {
        let path = dir.join(format!("{prefix}{name}"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        let header: Vec<&str> = label.iter().copied().chain(cols).collect();
        w.write_record(&header).map_err(|e| CliError::io(&path, e))?;
        for (tags, p) in points.clone() {
            let row: Vec<String> = tags.into_iter().chain([p[a], p[b]].map(|v| format!("{v:e}"))).collect();
            w.write_record(&row).map_err(|e| CliError::io(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn write_set_sections(dir: &Path, prefix: &str, set: &ReachableSet) -> Result<(), CliError> {
    let points: Vec<(Vec<String>, [f64; 4])> = set
        .converged()
        .map(|(node, s)| {
            let p = &s.terminal;
            (node.angles.iter().map(|a| format!("{a:e}")).collect(), [p.x, p.xdot, p.z, p.zdot])
        })
        .collect();
    write_section_csvs(dir, prefix, points.into_iter(), &["phi1", "phi2", "phi3"])
}

fn propagate_cmd(cfg: &RunConfig, state: [f64; 6], duration: Option<f64>, crossings: usize) -> Result<Value, CliError> {
    if state.iter().any(|c| !c.is_finite()) {
        return Err(CliError::usage("state must be finite"));
    }
    let params = params(cfg)?;
    let x0 = State::from_slice(&state, 0.0);
    let opts = propagation(cfg);
    let traj = match duration {
        Some(t) if t > 0.0 && t.is_finite() => propagate(&x0, t, None, &params, &opts)?,
        Some(t) => return Err(CliError::usage(format!("duration must be positive, got {t}"))),
        None if crossings == 0 => return Err(CliError::usage("crossings must be at least 1")),
        None => propagate_to_section(&x0, &params, crossings, &opts)?.0,
    };
    let dir = &cfg.output;
    let traj_path = dir.join("trajectory.csv");
    write_trajectory_csv(&traj, &params, create(&traj_path)?)?;
    write_events_csv(&traj, create(&dir.join("events.csv"))?)?;
    let points: Vec<(Vec<String>, [f64; 4])> = traj
        .crossings()
        .map(|c| {
            let s = &c.state;
            (vec![c.index.to_string()], [s.r.x, s.v.x, s.r.z, s.v.z])
        })
        .collect();
    write_section_csvs(dir, "", points.into_iter(), &["index"])?;
    let last = traj.states.last().copied().unwrap_or(x0);
    Ok(json!({
        "samples": traj.states.len(),
        "crossings": traj.crossings().count(),
        "t_end": last.t,
        "final_state": last.to_array(),
        "trajectory": traj_path,
    }))
}

fn corrector(cfg: &RunConfig) -> CorrectorOptions {
    CorrectorOptions {
        propagation: PropagationOptions::tolerance(cfg.propagation_tol.min(1e-13)),
        ..CorrectorOptions::default()
    }
}

/// Initial and target periodic orbits corrected from the configured seeds.
pub fn orbits(cfg: &RunConfig, params: &AsteroidParams) -> Result<(PeriodicOrbit, PeriodicOrbit), CliError> {
    let opts = corrector(cfg);
    let seed = |s: &[f64; 6]| State::from_slice(s, 0.0);
    let oi = correct_periodic_orbit(&seed(&cfg.initial_state), params, &opts)
        .map_err(|e| CliError::from(e).context("initial orbit"))?;
    let ot = correct_periodic_orbit(&seed(&cfg.target_state), params, &opts)
        .map_err(|e| CliError::from(e).context("target orbit"))?;
    Ok((oi, ot))
}

fn orbit_summary(name: &str, orbit: &PeriodicOrbit) -> Value {
    let spectral_radius = orbit
        .monodromy
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max);
    json!({
        "name": name,
        "initial_state": orbit.initial.to_array(),
        "period": orbit.period,
        "jacobi": orbit.jacobi,
        "return_error": orbit.return_error(),
        "monodromy_spectral_radius": spectral_radius,
    })
}

fn periodic(cfg: &RunConfig) -> Result<Value, CliError> {
    let params = params(cfg)?;
    let (oi, ot) = orbits(cfg, &params)?;
    let dir = &cfg.output;
    let entries = [CatalogEntry::from_orbit("initial", &oi), CatalogEntry::from_orbit("target", &ot)];
    write_catalog(&entries, create(&dir.join("catalog.csv"))?)?;
    let opts = propagation(cfg);
    for (name, orbit) in [("initial", &oi), ("target", &ot)] {
        let traj = propagate(&orbit.initial, orbit.period, None, &params, &opts)?;
        write_trajectory_csv(&traj, &params, create(&dir.join(format!("orbit_{name}.csv")))?)?;
    }
    Ok(json!({
        "orbits": [orbit_summary("initial", &oi), orbit_summary("target", &ot)],
        "catalog": dir.join("catalog.csv"),
    }))
}

fn sweep(cfg: &RunConfig) -> Result<Value, CliError> {
    let params = params(cfg)?;
    let (oi, ot) = orbits(cfg, &params)?;
    let set = sweep_reachable_set(&oi.initial, cfg.grid, cfg.u_m(), &params, &cfg.sweep())?;
    let target = matching_crossing(&ot, &set.x_n)?;
    let dir = &cfg.output;
    let k = &cfg.weights;
    write_reachable_set_csv(&set, Some((&target, k)), create(&dir.join("reachable_set.csv"))?)?;
    write_distance_csv(&set, &target, k, create(&dir.join("d_vs_phi.csv"))?)?;
    write_set_sections(dir, "", &set)?;
    let x0 = project_to_section(&oi.initial)?;
    let summary = json!({
        "nodes": set.nodes.len(),
        "converged_fraction": set.converged_fraction(),
        "successful": set.is_successful(),
        "t_f": set.t_f(),
        "start": [x0.x, x0.z, x0.xdot, x0.zdot],
        "reachable_set": dir.join("reachable_set.csv"),
    });
    if !set.is_successful() {
        return Err(ReachError::SweepFailed {
            converged: set.converged_fraction(),
        }
        .into());
    }
    Ok(summary)
}

fn transfer(cfg: &RunConfig) -> Result<Value, CliError> {
    let params = params(cfg)?;
    let (oi, ot) = orbits(cfg, &params)?;
    let opts = cfg.plan();
    let result = plan_transfer(&oi, &ot, &params, &opts);
    let (plan, status, error) = match &result {
        Ok(p) => (p, "complete", None),
        Err(e @ PlanError::StageCapExceeded { .. }) => (e.plan(), "stage_cap_exceeded", None),
        Err(e @ PlanError::Failed { source, .. }) => (e.plan(), "failed", Some(CliError::new(reach_kind(source), e.to_string()))),
    };
    let message = result.as_ref().err().map(|e| e.to_string());
    let dir = &cfg.output;
    let manifest = write_plan(plan, dir, &params, opts.u_m, &opts.weights, status, message)?;
    for (i, stage) in plan.stages.iter().enumerate() {
        let k = i + 1;
        write_distance_csv(&stage.set, &stage.target, &opts.weights, create(&dir.join(format!("d_vs_phi_stage{k}.csv")))?)?;
        write_set_sections(dir, &format!("stage{k}_"), &stage.set)?;
    }
    if let Some(e) = error {
        return Err(e);
    }
    // Reaching the stage cap is an expected outcome at coarse resolution;
    // the manifest records it.
    Ok(json!({
        "status": status,
        "stages": manifest.stages.len(),
        "distances": plan.distances(),
        "initial_distance": plan.initial_distance,
        "final_leg": manifest.final_leg.is_some(),
        "manifest": dir.join("manifest.json"),
    }))
}
