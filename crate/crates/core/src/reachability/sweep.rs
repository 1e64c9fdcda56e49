//! Reachable-set approximation over the angle grid and per-stage selection.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shooting::reference_crossing;
use super::{distance_on_section, solve_reachability_bvp, BvpSolution, OcpProblem, ReachError, SolverOptions};
use crate::dynamics::{AsteroidParams, State};
use crate::poincare::SectionPoint;

/// Neighbours tried as warm starts before a node falls back to a cold start.
pub const WARM_RETRIES: usize = 3;
/// Fraction of converged nodes for a sweep to count as successful.
pub const SUCCESS_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    pub solver: SolverOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeOutcome {
    Converged(Box<BvpSolution>),
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub index: [usize; 3],
    pub angles: [f64; 3],
    pub outcome: NodeOutcome,
}

impl GridNode {
    pub fn solution(&self) -> Option<&BvpSolution> {
        match &self.outcome {
            NodeOutcome::Converged(s) => Some(s),
            NodeOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachableSet {
    /// Steps per angle.
    pub steps: usize,
    pub x0: State,
    /// Uncontrolled terminal crossing.
    pub x_n: State,
    pub u_m: f64,
    /// Nodes in lexicographic index order.
    pub nodes: Vec<GridNode>,
}

impl ReachableSet {
    pub fn t_f(&self) -> f64 {
        self.x_n.t
    }

    pub fn node(&self, index: [usize; 3]) -> Option<&GridNode> {
        let n = self.steps;
        if index.iter().any(|&i| i >= n) {
            return None;
        }
        self.nodes.get((index[0] * n + index[1]) * n + index[2])
    }

    pub fn converged(&self) -> impl Iterator<Item = (&GridNode, &BvpSolution)> {
        self.nodes.iter().filter_map(|g| g.solution().map(|s| (g, s)))
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.converged().count() as f64 / self.nodes.len() as f64
    }

    pub fn is_successful(&self) -> bool {
        self.converged_fraction() >= SUCCESS_FRACTION
    }
}

/// Angles of grid node `index`: phi1 = i pi / n, phi2 = j pi / n,
/// phi3 = 2 pi k / n.
pub fn grid_angles(index: [usize; 3], steps: usize) -> [f64; 3] {
    let n = steps as f64;
    [
        index[0] as f64 * PI / n,
        index[1] as f64 * PI / n,
        index[2] as f64 * 2.0 * PI / n,
    ]
}

/// All grid nodes in lexicographic order.
pub fn angle_grid(steps: usize) -> Vec<([usize; 3], [f64; 3])> {
    let mut out = Vec::with_capacity(steps.pow(3));
    for i in 0..steps {
        for j in 0..steps {
            for k in 0..steps {
                out.push(([i, j, k], grid_angles([i, j, k], steps)));
            }
        }
    }
    out
}

/// Solves one reachability problem per grid node. Nodes are processed in
/// wavefronts of constant i + j + k; each node warm-starts from its
/// converged neighbours one step back along each axis, so results do not
/// depend on the thread count.
pub fn sweep_reachable_set(
    x0: &State,
    steps: usize,
    u_m: f64,
    params: &AsteroidParams,
    opts: &SweepOptions,
) -> Result<ReachableSet, ReachError> {
    if steps == 0 {
        return Err(ReachError::InvalidProblem("grid needs at least one step".into()));
    }
    let x_n = reference_crossing(x0, params, &opts.solver)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if opts.threads > 0 {
        builder = builder.num_threads(opts.threads);
    }
    let pool = builder
        .build()
        .map_err(|e| ReachError::InvalidProblem(format!("thread pool: {e}")))?;

    let grid = angle_grid(steps);
    let mut outcomes: Vec<Option<NodeOutcome>> = vec![None; grid.len()];
    let flat = |i: [usize; 3]| (i[0] * steps + i[1]) * steps + i[2];
    for level in 0..=3 * (steps - 1) {
        let wave: Vec<usize> = (0..grid.len())
            .filter(|&n| grid[n].0.iter().sum::<usize>() == level)
            .collect();
        let solved: Vec<(usize, NodeOutcome)> = pool.install(|| {
            wave.par_iter()
                .map(|&n| {
                    let (index, angles) = grid[n];
                    let neighbours: Vec<&BvpSolution> = (0..3)
                        .rev()
                        .filter(|&a| index[a] > 0)
                        .filter_map(|a| {
                            let mut prev = index;
                            prev[a] -= 1;
                            match &outcomes[flat(prev)] {
                                Some(NodeOutcome::Converged(s)) => Some(s.as_ref()),
                                _ => None,
                            }
                        })
                        .take(WARM_RETRIES)
                        .collect();
                    let seed = opts.seed.wrapping_add(n as u64);
                    (n, solve_node(x0, &x_n, angles, u_m, params, &opts.solver, &neighbours, seed))
                })
                .collect()
        });
        for (n, outcome) in solved {
            outcomes[n] = Some(outcome);
        }
    }

    let nodes = grid
        .into_iter()
        .zip(outcomes)
        .map(|((index, angles), outcome)| GridNode {
            index,
            angles,
            outcome: outcome.expect("every wavefront is solved"),
        })
        .collect();
    let set = ReachableSet {
        steps,
        x0: *x0,
        x_n,
        u_m,
        nodes,
    };
    log::info!(
        "sweep {steps}^3 at u_m {u_m:e}: {:.0}% converged",
        100.0 * set.converged_fraction()
    );
    Ok(set)
}

#[allow(clippy::too_many_arguments)]
fn solve_node(
    x0: &State,
    x_n: &State,
    angles: [f64; 3],
    u_m: f64,
    params: &AsteroidParams,
    solver: &SolverOptions,
    neighbours: &[&BvpSolution],
    seed: u64,
) -> NodeOutcome {
    let prob = match OcpProblem::with_reference(*x0, *x_n, angles, u_m) {
        Ok(p) => p,
        Err(e) => return NodeOutcome::Failed { reason: e.to_string() },
    };
    for warm in neighbours {
        if let Ok(s) = solve_reachability_bvp(&prob, params, solver, Some(warm), seed) {
            return NodeOutcome::Converged(Box::new(s));
        }
    }
    match solve_reachability_bvp(&prob, params, solver, None, seed) {
        Ok(s) => NodeOutcome::Converged(Box::new(s)),
        Err(e) => {
            log::debug!("node {angles:?} failed: {e}");
            NodeOutcome::Failed { reason: e.to_string() }
        }
    }
}

/// Grid node chosen as the start of the next stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: [usize; 3],
    pub angles: [f64; 3],
    pub point: SectionPoint,
    pub distance: f64,
}

/// Converged node nearest to `target` under the weighted section distance.
/// Ties go to the lexicographically first angle triple.
pub fn select_next_stage(
    set: &ReachableSet,
    target: &SectionPoint,
    k: &[f64; 4],
) -> Result<Selection, ReachError> {
    if k.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || k.iter().all(|w| *w == 0.0) {
        return Err(ReachError::InvalidProblem(format!("distance weights {k:?}")));
    }
    let mut best: Option<Selection> = None;
    for (node, sol) in set.converged() {
        let d = distance_on_section(&sol.terminal, target, k);
        if best.as_ref().is_none_or(|b| d < b.distance) {
            best = Some(Selection {
                index: node.index,
                angles: node.angles,
                point: sol.terminal,
                distance: d,
            });
        }
    }
    best.ok_or(ReachError::EmptySet)
}
