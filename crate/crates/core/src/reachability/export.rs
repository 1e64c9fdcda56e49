//! CSV and JSON output for reachable sets and transfer plans.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{distance_on_section, ArcSample, BvpSolution, ReachError, ReachableSet, Residuals, TransferPlan};
use crate::dynamics::{write_trajectory_csv, AsteroidParams, Trajectory};
use crate::poincare::SectionPoint;

fn csv_err(e: csv::Error) -> ReachError {
    ReachError::Io(e.to_string())
}

fn io_err(e: std::io::Error) -> ReachError {
    ReachError::Io(e.to_string())
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// `phi1,phi2,phi3,converged,x,z,xdot,zdot,J,d`, one row per grid node.
/// `d` is the weighted distance to `target` when given; failed nodes leave
/// the numeric columns empty.
pub fn write_reachable_set_csv<W: Write>(
    set: &ReachableSet,
    target: Option<(&SectionPoint, &[f64; 4])>,
    out: W,
) -> Result<(), ReachError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phi1", "phi2", "phi3", "converged", "x", "z", "xdot", "zdot", "J", "d"])
        .map_err(csv_err)?;
    for node in &set.nodes {
        let mut row: Vec<String> = node.angles.iter().map(|a| num(*a)).collect();
        match node.solution() {
            Some(s) => {
                let p = &s.terminal;
                row.push("true".into());
                row.extend([p.x, p.z, p.xdot, p.zdot, s.cost].map(num));
                row.push(target.map_or(String::new(), |(t, k)| num(distance_on_section(p, t, k))));
            }
            None => {
                row.push("false".into());
                row.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// `phi1,phi2,phi3,d` over the converged nodes.
pub fn write_distance_csv<W: Write>(
    set: &ReachableSet,
    target: &SectionPoint,
    k: &[f64; 4],
    out: W,
) -> Result<(), ReachError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phi1", "phi2", "phi3", "d"]).map_err(csv_err)?;
    for (node, s) in set.converged() {
        let d = distance_on_section(&s.terminal, target, k);
        let [a, b, c] = node.angles;
        w.write_record([a, b, c, d].map(num)).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// `t,ux,uy,uz,u_norm` for every sample.
pub fn write_control_history_csv<'a, W: Write>(
    samples: impl IntoIterator<Item = &'a ArcSample>,
    out: W,
) -> Result<(), ReachError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "ux", "uy", "uz", "u_norm"]).map_err(csv_err)?;
    for s in samples {
        w.write_record([s.state.t, s.u.x, s.u.y, s.u.z, s.u.norm()].map(num))
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// States of a solved arc as a trajectory.
pub fn arc_trajectory(sol: &BvpSolution) -> Trajectory {
    Trajectory {
        states: sol.samples.iter().map(|s| s.state).collect(),
        ..Trajectory::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedNode {
    pub index: [usize; 3],
    pub angles: [f64; 3],
    pub x: f64,
    pub z: f64,
    pub xdot: f64,
    pub zdot: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: usize,
    pub steps: usize,
    pub t0: f64,
    pub t_f: f64,
    pub converged_fraction: f64,
    pub reachable_set_csv: String,
    pub trajectory_csv: String,
    pub selected: SelectedNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegManifest {
    pub trajectory_csv: String,
    pub t0: f64,
    pub t_f: f64,
    pub cost: f64,
    pub max_control: f64,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    /// `complete`, `stage_cap_exceeded` or `failed`.
    pub status: String,
    pub message: Option<String>,
    pub u_m: f64,
    pub weights: [f64; 4],
    pub initial_distance: f64,
    pub stages: Vec<StageManifest>,
    pub final_leg: Option<LegManifest>,
    pub trajectory_csv: String,
    pub control_csv: String,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, ReachError> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(io_err)?))
}

fn write_traj(dir: &Path, name: &str, traj: &Trajectory, params: &AsteroidParams) -> Result<(), ReachError> {
    write_trajectory_csv(traj, params, create(dir, name)?)?;
    Ok(())
}

/// Writes per-stage reachable-set and trajectory CSVs, the final leg, the
/// concatenated trajectory and control history, and `manifest.json`
/// referencing them, all under `dir`.
#[allow(clippy::too_many_arguments)]
pub fn write_plan(
    plan: &TransferPlan,
    dir: &Path,
    params: &AsteroidParams,
    u_m: f64,
    weights: &[f64; 4],
    status: &str,
    message: Option<String>,
) -> Result<PlanManifest, ReachError> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let mut stages = Vec::new();
    for (i, stage) in plan.stages.iter().enumerate() {
        let k = i + 1;
        let set_csv = format!("stage{k}_reachable_set.csv");
        let traj_csv = format!("stage{k}_trajectory.csv");
        write_reachable_set_csv(&stage.set, Some((&stage.target, weights)), create(dir, &set_csv)?)?;
        let sol = stage.selected_solution();
        write_traj(dir, &traj_csv, &arc_trajectory(sol), params)?;
        let sel = &stage.selection;
        stages.push(StageManifest {
            stage: k,
            steps: stage.set.steps,
            t0: stage.set.x0.t,
            t_f: stage.set.t_f(),
            converged_fraction: stage.set.converged_fraction(),
            reachable_set_csv: set_csv,
            trajectory_csv: traj_csv,
            selected: SelectedNode {
                index: sel.index,
                angles: sel.angles,
                x: sel.point.x,
                z: sel.point.z,
                xdot: sel.point.xdot,
                zdot: sel.point.zdot,
                distance: sel.distance,
            },
        });
    }
    let final_leg = match &plan.final_leg {
        Some(leg) => {
            let name = "final_leg_trajectory.csv".to_string();
            write_traj(dir, &name, &arc_trajectory(leg), params)?;
            Some(LegManifest {
                trajectory_csv: name,
                t0: leg.t0,
                t_f: leg.t_f,
                cost: leg.cost,
                max_control: leg.max_control(),
                residuals: leg.residuals,
            })
        }
        None => None,
    };
    let manifest = PlanManifest {
        status: status.to_string(),
        message,
        u_m,
        weights: *weights,
        initial_distance: plan.initial_distance,
        stages,
        final_leg,
        trajectory_csv: "transfer_trajectory.csv".into(),
        control_csv: "control_history.csv".into(),
    };
    write_traj(dir, &manifest.trajectory_csv, &plan.trajectory, params)?;
    write_control_history_csv(plan.samples(), create(dir, &manifest.control_csv)?)?;
    let mut f = create(dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| ReachError::Io(e.to_string()))?;
    f.flush().map_err(io_err)?;
    Ok(manifest)
}
