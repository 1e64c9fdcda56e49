//! Staged transfer: sweep, select and re-seed until the target orbit is
//! close, then a fixed-endpoint leg onto it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::shooting::reference_crossing;
use super::{
    distance_on_section, select_next_stage, solve_fixed_endpoint_transfer, sweep_reachable_set,
    ArcSample, BvpSolution, ReachError, ReachableSet, Selection, SweepOptions,
};
use crate::dynamics::{AsteroidParams, Crossing, CrossingDirection, Event, State, Trajectory};
use crate::poincare::{project_to_section, PeriodicOrbit, SectionPoint, SECTION_TOL};
use crate::scenario::CONTROL_BOUND;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanOptions {
    /// Maximum number of reachability stages.
    pub stage_cap: usize,
    /// Steps per angle of every sweep.
    pub grid: usize,
    /// Section distance weights on (x, z, xdot, zdot).
    pub weights: [f64; 4],
    /// Thrust bound, km/s^2.
    pub u_m: f64,
    /// Stages stop once the selected distance falls below this.
    pub threshold: f64,
    pub sweep: SweepOptions,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            stage_cap: 4,
            grid: 10,
            weights: [1.0; 4],
            u_m: CONTROL_BOUND,
            threshold: 1e-2,
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub set: ReachableSet,
    /// Target-orbit crossing the stage was scored against.
    pub target: SectionPoint,
    pub selection: Selection,
}

impl Stage {
    pub fn selected_solution(&self) -> &BvpSolution {
        self.set
            .node(self.selection.index)
            .and_then(|n| n.solution())
            .expect("selection refers to a converged node")
    }
}

#[derive(Debug, Clone)]
pub struct TransferPlan {
    pub stages: Vec<Stage>,
    /// Distance from the start to its target crossing before any stage.
    pub initial_distance: f64,
    /// Fixed-endpoint leg onto the target orbit; `None` when the start
    /// already lies on the target crossing or the leg failed.
    pub final_leg: Option<BvpSolution>,
    /// State the final leg arrives at.
    pub final_target: Option<State>,
    /// Selected arcs followed by the final leg.
    pub trajectory: Trajectory,
}

impl TransferPlan {
    /// Distances of the selected nodes, one per stage.
    pub fn distances(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.selection.distance).collect()
    }

    /// Last selected distance, or the initial distance with no stage.
    pub fn distance(&self) -> f64 {
        self.stages
            .last()
            .map_or(self.initial_distance, |s| s.selection.distance)
    }

    /// Control and costate history of the selected arcs and the final leg.
    pub fn samples(&self) -> impl Iterator<Item = &ArcSample> {
        self.stages
            .iter()
            .flat_map(|s| s.selected_solution().samples.iter())
            .chain(self.final_leg.iter().flat_map(|l| l.samples.iter()))
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("stage cap reached at distance {:e}", .plan.distance())]
    StageCapExceeded { plan: Box<TransferPlan> },
    #[error("transfer planning failed after {} stages: {source}", .plan.stages.len())]
    Failed {
        plan: Box<TransferPlan>,
        source: ReachError,
    },
}

impl PlanError {
    pub fn plan(&self) -> &TransferPlan {
        match self {
            PlanError::StageCapExceeded { plan } | PlanError::Failed { plan, .. } => plan,
        }
    }
}

/// Crossing of the target orbit whose vy sign matches `like`.
pub fn matching_crossing(orbit: &PeriodicOrbit, like: &State) -> Result<SectionPoint, ReachError> {
    let dir = CrossingDirection::of(like.v.y);
    let start = std::iter::once(orbit.initial);
    let found = start
        .chain(orbit.crossings.iter().map(|c| c.state))
        .find(|s| CrossingDirection::of(s.v.y) == dir)
        .ok_or_else(|| ReachError::InvalidProblem(format!("target orbit has no {dir:?} crossing")))?;
    let mut s = found;
    if s.r.y.abs() < SECTION_TOL {
        s.r.y = 0.0;
    }
    Ok(project_to_section(&s)?)
}

/// Chains reachability stages from `orbit_i` toward `orbit_t` and closes
/// with a fixed-endpoint leg. Each stage starts from the exact terminal
/// state selected by the previous one.
pub fn plan_transfer(
    orbit_i: &PeriodicOrbit,
    orbit_t: &PeriodicOrbit,
    params: &AsteroidParams,
    opts: &PlanOptions,
) -> Result<TransferPlan, PlanError> {
    let mut plan = TransferPlan {
        stages: Vec::new(),
        initial_distance: f64::NAN,
        final_leg: None,
        final_target: None,
        trajectory: Trajectory::default(),
    };
    macro_rules! fail {
        ($e:expr) => {{
            let source: ReachError = $e;
            assemble(&mut plan, &orbit_i.initial);
            return Err(PlanError::Failed {
                plan: Box::new(plan),
                source,
            });
        }};
    }
    if opts.stage_cap == 0 || opts.grid == 0 {
        fail!(ReachError::InvalidProblem("stage cap and grid must be positive".into()));
    }

    let mut x = orbit_i.initial;
    match matching_crossing(orbit_t, &x) {
        Ok(t) => match project_to_section(&x) {
            Ok(p) => plan.initial_distance = distance_on_section(&p, &t, &opts.weights),
            Err(e) => fail!(e.into()),
        },
        Err(e) => fail!(e),
    }
    let mut d = plan.initial_distance;
    if d == 0.0 {
        assemble(&mut plan, &x);
        return Ok(plan);
    }

    while d >= opts.threshold && plan.stages.len() < opts.stage_cap {
        let set = match sweep_reachable_set(&x, opts.grid, opts.u_m, params, &opts.sweep) {
            Ok(s) => s,
            Err(e) => fail!(e),
        };
        let target = match matching_crossing(orbit_t, &set.x_n) {
            Ok(t) => t,
            Err(e) => fail!(e),
        };
        let converged = set.converged_fraction();
        let selection = match select_next_stage(&set, &target, &opts.weights) {
            Ok(s) => s,
            Err(e) => fail!(e),
        };
        log::info!(
            "stage {}: node {:?} at distance {:e}",
            plan.stages.len() + 1,
            selection.index,
            selection.distance
        );
        x = selection.point.full_state;
        d = selection.distance;
        let successful = set.is_successful();
        plan.stages.push(Stage {
            set,
            target,
            selection,
        });
        if !successful {
            fail!(ReachError::SweepFailed { converged });
        }
    }

    // Final leg over the uncontrolled return time onto the matching
    // crossing of the target orbit.
    let leg = reference_crossing(&x, params, &opts.sweep.solver).and_then(|xn| {
        let mut xt = matching_crossing(orbit_t, &xn)?.full_state;
        xt.t = xn.t;
        plan.final_target = Some(xt);
        solve_fixed_endpoint_transfer(&x, &xt, xn.t, opts.u_m, params, &opts.sweep.solver)
    });
    let leg_error = match leg {
        Ok(l) => {
            plan.final_leg = Some(l);
            None
        }
        Err(e) => Some(e),
    };
    assemble(&mut plan, &orbit_i.initial);
    match leg_error {
        _ if d >= opts.threshold => Err(PlanError::StageCapExceeded {
            plan: Box::new(plan),
        }),
        Some(source) => Err(PlanError::Failed {
            plan: Box::new(plan),
            source,
        }),
        None => Ok(plan),
    }
}

/// Builds the concatenated trajectory with a crossing event at the end of
/// every arc.
fn assemble(plan: &mut TransferPlan, start: &State) {
    let mut traj = Trajectory {
        states: vec![*start],
        ..Trajectory::default()
    };
    let arcs = plan
        .stages
        .iter()
        .map(|s| s.selected_solution())
        .chain(plan.final_leg.iter());
    for (index, arc) in arcs.enumerate() {
        // Each arc starts at the previous arc's end.
        traj.states
            .extend(arc.samples.iter().skip(1).map(|s| s.state));
        let end = *traj.states.last().unwrap();
        traj.events.push(Event::Crossing(Crossing {
            index,
            state: end,
            direction: CrossingDirection::of(end.v.y),
        }));
    }
    plan.trajectory = traj;
}
