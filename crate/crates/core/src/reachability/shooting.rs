//! Multiple-shooting Newton solver for the state/costate boundary-value
//! problems.

use nalgebra::{SVector, DMatrix, DVector, Matrix6, SMatrix, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    direction, orthogonal_basis, section_selector, terminal_cost, terminal_residuals, Augmented,
    ControlLaw, Costate, Mat12, ReachError, Sensitivity,
};
use crate::dynamics::{
    propagate_to_section, propagate_with_stm, AsteroidParams, DynamicsError, PropagationOptions,
    State, Stm,
};
use crate::gravity::is_interior;
use crate::ode::{self, Control};
use crate::poincare::{q_matrix, SectionPoint, SECTION_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Multiple-shooting segments, uniform in time.
    pub segments: usize,
    /// Bound on terminal-constraint and transversality residuals.
    pub tolerance: f64,
    /// Bound on state/costate mismatch at patch points.
    pub continuity_tolerance: f64,
    pub max_iterations: usize,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            segments: 6,
            tolerance: 1e-8,
            continuity_tolerance: 1e-10,
            max_iterations: 60,
            rtol: 1e-13,
            atol: 1e-14,
            max_steps: 200_000,
        }
    }
}

impl SolverOptions {
    fn ode(&self) -> ode::Options {
        ode::Options {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            error_dim: Some(12),
            ..ode::Options::default()
        }
    }

    pub fn propagation(&self) -> PropagationOptions {
        PropagationOptions {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            ..PropagationOptions::default()
        }
    }
}

/// One output node of a converged arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSample {
    pub state: State,
    pub costate: Costate,
    pub u: Vector3<f64>,
    pub hamiltonian: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest terminal-constraint violation (y_f and direction, or the
    /// fixed endpoint).
    pub terminal: f64,
    /// Largest state/costate mismatch at a patch point.
    pub continuity: f64,
    /// Largest transversality violation; zero for fixed-endpoint legs.
    pub transversality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpSolution {
    pub law: ControlLaw,
    /// Direction angles; `None` for a fixed-endpoint leg.
    pub angles: Option<[f64; 3]>,
    pub t0: f64,
    pub t_f: f64,
    /// State and costate at the start of every segment.
    pub nodes: Vec<(State, Costate)>,
    /// Terminal multipliers (empty for a fixed-endpoint leg).
    pub beta: Vec<f64>,
    pub samples: Vec<ArcSample>,
    pub terminal: SectionPoint,
    /// J for reachability legs, integral of |u|^2 / 2 for the final leg.
    pub cost: f64,
    pub residuals: Residuals,
    /// (max H - min H) / max |H| over the samples.
    pub hamiltonian_variation: f64,
    pub iterations: usize,
}

impl BvpSolution {
    pub fn max_control(&self) -> f64 {
        self.samples.iter().map(|s| s.u.norm()).fold(0.0, f64::max)
    }

    pub fn terminal_state(&self) -> &State {
        &self.terminal.full_state
    }

    fn unknowns(&self) -> Vec<f64> {
        let mut x = self.nodes[0].1.vector().as_slice().to_vec();
        for (s, l) in &self.nodes[1..] {
            x.extend_from_slice(&s.to_array());
            x.extend_from_slice(l.vector().as_slice());
        }
        x.extend_from_slice(&self.beta);
        x
    }
}

/// Directional reachability problem from `x0` over the uncontrolled return
/// time to the next section crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpProblem {
    pub x0: State,
    pub x_n: State,
    pub t_f: f64,
    pub u_m: f64,
    pub angles: [f64; 3],
}

impl OcpProblem {
    /// Builds the problem, computing the uncontrolled reference crossing.
    pub fn new(
        x0: State,
        angles: [f64; 3],
        u_m: f64,
        params: &AsteroidParams,
        opts: &SolverOptions,
    ) -> Result<Self, ReachError> {
        let x_n = reference_crossing(&x0, params, opts)?;
        Self::with_reference(x0, x_n, angles, u_m)
    }

    pub fn with_reference(
        x0: State,
        x_n: State,
        angles: [f64; 3],
        u_m: f64,
    ) -> Result<Self, ReachError> {
        let prob = Self {
            x0,
            t_f: x_n.t,
            x_n,
            u_m,
            angles,
        };
        prob.validate()?;
        Ok(prob)
    }

    fn validate(&self) -> Result<(), ReachError> {
        use std::f64::consts::PI;
        let [a, b, c] = self.angles;
        if !(self.u_m >= 0.0 && self.u_m.is_finite()) {
            return Err(ReachError::InvalidProblem(format!("u_m = {}", self.u_m)));
        }
        if !(self.t_f > self.x0.t) {
            return Err(ReachError::InvalidProblem("t_f must follow t0".into()));
        }
        if !((0.0..PI).contains(&a) && (0.0..PI).contains(&b) && (0.0..2.0 * PI).contains(&c)) {
            return Err(ReachError::InvalidProblem(format!("angles {:?} out of range", self.angles)));
        }
        Ok(())
    }
}

/// Next transversal crossing of the uncontrolled flow from `x0`.
pub(crate) fn reference_crossing(
    x0: &State,
    params: &AsteroidParams,
    opts: &SolverOptions,
) -> Result<State, ReachError> {
    let mut s = *x0;
    if s.r.y.abs() < SECTION_TOL {
        s.r.y = 0.0;
    }
    let (_, crossings) = propagate_to_section(&s, params, 1, &opts.propagation())?;
    Ok(crossings[0].state)
}

enum Terminal {
    Reach {
        xn: State,
        angles: [f64; 3],
    },
    Fixed {
        xt: State,
    },
}

struct SegmentOut {
    end: [f64; 12],
    psi: Option<Mat12>,
    samples: Vec<(f64, [f64; 12])>,
}

#[allow(clippy::too_many_arguments)]
fn propagate_segment(
    p: &AsteroidParams,
    law: ControlLaw,
    z0: &[f64; 12],
    t0: f64,
    t1: f64,
    sens: bool,
    record: bool,
    opts: &SolverOptions,
) -> Result<SegmentOut, ReachError> {
    let sys = Augmented {
        p,
        law,
        sens: if sens { Sensitivity::Full } else { Sensitivity::None },
    };
    let mut y0 = z0.to_vec();
    if sens {
        y0.extend_from_slice(Mat12::identity().as_slice());
    }
    let mut samples = Vec::new();
    if record {
        samples.push((t0, *z0));
    }
    let escape = p.escape_radius();
    let out = ode::integrate(&sys, t0, &y0, t1, &opts.ode(), |step| {
        let r = Vector3::new(step.y1[0], step.y1[1], step.y1[2]);
        if is_interior(&r, &p.gravity) {
            return Err(ReachError::Dynamics(DynamicsError::Collision { t: step.t1 }));
        }
        if r.norm() > escape {
            return Err(ReachError::Dynamics(DynamicsError::Escape {
                t: step.t1,
                radius: escape,
            }));
        }
        if record {
            let mut z = [0.0; 12];
            z.copy_from_slice(&step.y1[..12]);
            samples.push((step.t1, z));
        }
        Ok(Control::Continue)
    })?;
    let mut end = [0.0; 12];
    end.copy_from_slice(&out.y[..12]);
    Ok(SegmentOut {
        end,
        psi: sens.then(|| Mat12::from_column_slice(&out.y[12..156])),
        samples,
    })
}

struct Eval {
    f: DVector<f64>,
    jac: DMatrix<f64>,
    end: [f64; 12],
    residuals: Residuals,
}

struct Stalled {
    err: ReachError,
    x: DVector<f64>,
}

struct Shooting<'a> {
    p: &'a AsteroidParams,
    law: ControlLaw,
    x0: State,
    times: Vec<f64>,
    terminal: Terminal,
    opts: &'a SolverOptions,
}

impl Shooting<'_> {
    fn segments(&self) -> usize {
        self.times.len() - 1
    }

    fn n_beta(&self) -> usize {
        match self.terminal {
            Terminal::Reach { .. } => 4,
            Terminal::Fixed { .. } => 0,
        }
    }

    fn n_terminal(&self) -> usize {
        match self.terminal {
            Terminal::Reach { .. } => 10,
            Terminal::Fixed { .. } => 6,
        }
    }

    fn n_unknowns(&self) -> usize {
        6 + 12 * (self.segments() - 1) + self.n_beta()
    }

    fn node(&self, x: &DVector<f64>, m: usize) -> [f64; 12] {
        let mut z = [0.0; 12];
        if m == 0 {
            z[..6].copy_from_slice(&self.x0.to_array());
            z[6..].copy_from_slice(&x.as_slice()[..6]);
        } else {
            let o = 6 + 12 * (m - 1);
            z.copy_from_slice(&x.as_slice()[o..o + 12]);
        }
        z
    }

    /// Column offset of segment `m`'s free variables and the first row of
    /// `Psi` they map to (the state part of node 0 is fixed).
    fn columns(&self, m: usize) -> (usize, usize) {
        if m == 0 {
            (0, 6)
        } else {
            (6 + 12 * (m - 1), 0)
        }
    }

    fn beta(&self, x: &DVector<f64>) -> Vector4<f64> {
        match self.terminal {
            Terminal::Reach { .. } => {
                let o = self.n_unknowns() - 4;
                Vector4::from_column_slice(&x.as_slice()[o..])
            }
            Terminal::Fixed { .. } => Vector4::zeros(),
        }
    }

    /// Terminal residual and its derivatives with respect to the end node
    /// and to beta.
    fn terminal(
        &self,
        end: &[f64; 12],
        beta: &Vector4<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let xf = State::from_slice(&end[..6], 0.0);
        let lf = Costate::from_slice(&end[6..]);
        match &self.terminal {
            Terminal::Reach { xn, angles } => {
                let r = terminal_residuals(&xf, &lf, xn, *angles, beta);
                let b = orthogonal_basis(&direction(*angles));
                let s = section_selector();
                let mut dz = DMatrix::zeros(10, 12);
                dz[(0, 1)] = 1.0;
                dz.view_mut((1, 0), (3, 6)).copy_from(&(b.transpose() * s));
                dz.view_mut((4, 0), (6, 6)).copy_from(&q_matrix());
                dz.view_mut((4, 6), (6, 6)).fill_with_identity();
                let mut db = DMatrix::zeros(10, 4);
                db[(5, 0)] = -1.0;
                db.view_mut((4, 1), (6, 3)).copy_from(&(-(s.transpose() * b)));
                (DVector::from_column_slice(r.as_slice()), dz, db)
            }
            Terminal::Fixed { xt } => {
                let r = xf.vector() - xt.vector();
                let mut dz = DMatrix::zeros(6, 12);
                dz.view_mut((0, 0), (6, 6)).fill_with_identity();
                (DVector::from_column_slice(r.as_slice()), dz, DMatrix::zeros(6, 0))
            }
        }
    }

    fn evaluate(&self, x: &DVector<f64>, with_jac: bool) -> Result<Eval, ReachError> {
        let n = self.n_unknowns();
        let m_seg = self.segments();
        let mut f = DVector::zeros(n);
        let mut jac = DMatrix::zeros(if with_jac { n } else { 0 }, if with_jac { n } else { 0 });
        let mut continuity: f64 = 0.0;
        let mut end = [0.0; 12];
        for m in 0..m_seg {
            let z = self.node(x, m);
            let out = propagate_segment(
                self.p,
                self.law,
                &z,
                self.times[m],
                self.times[m + 1],
                with_jac,
                false,
                self.opts,
            )?;
            let (col, first) = self.columns(m);
            let width = 12 - first;
            if m + 1 < m_seg {
                let next = self.node(x, m + 1);
                let row = 12 * m;
                for i in 0..12 {
                    f[row + i] = out.end[i] - next[i];
                    continuity = continuity.max(f[row + i].abs());
                }
                if with_jac {
                    let psi = out.psi.unwrap();
                    jac.view_mut((row, col), (12, width))
                        .copy_from(&psi.view((0, first), (12, width)));
                    let (ncol, _) = self.columns(m + 1);
                    for i in 0..12 {
                        jac[(row + i, ncol + i)] = -1.0;
                    }
                }
            } else {
                end = out.end;
                let row = 12 * (m_seg - 1);
                let (r, dz, db) = self.terminal(&out.end, &self.beta(x));
                f.rows_mut(row, r.len()).copy_from(&r);
                if with_jac {
                    let psi = out.psi.unwrap();
                    let psi = DMatrix::from_column_slice(12, 12, psi.as_slice());
                    let block = &dz * psi.view((0, first), (12, width));
                    jac.view_mut((row, col), (r.len(), width)).copy_from(&block);
                    if db.ncols() > 0 {
                        jac.view_mut((row, n - 4), (r.len(), 4)).copy_from(&db);
                    }
                }
            }
        }
        let row = 12 * (m_seg - 1);
        let tail = f.rows(row, self.n_terminal());
        let residuals = match self.terminal {
            Terminal::Reach { .. } => Residuals {
                terminal: tail.rows(0, 4).amax(),
                continuity,
                transversality: tail.rows(4, 6).amax(),
            },
            Terminal::Fixed { .. } => Residuals {
                terminal: tail.amax(),
                continuity,
                transversality: 0.0,
            },
        };
        Ok(Eval {
            f,
            jac,
            end,
            residuals,
        })
    }

    fn converged(&self, ev: &Eval) -> bool {
        let r = &ev.residuals;
        let on_section = match self.terminal {
            Terminal::Reach { .. } => ev.end[1].abs() < SECTION_TOL,
            Terminal::Fixed { .. } => true,
        };
        on_section
            && r.terminal < self.opts.tolerance
            && r.transversality < self.opts.tolerance
            && r.continuity < self.opts.continuity_tolerance
    }

    /// Damped Newton with row and column equilibration. On failure the last
    /// accepted iterate is returned with the error.
    fn solve(&self, x0: DVector<f64>) -> Result<(DVector<f64>, Eval, usize), Stalled> {
        let mut x = x0;
        let mut ev = self.evaluate(&x, true).map_err(|e| Stalled { err: e, x: x.clone() })?;
        let row_scale: DVector<f64> = DVector::from_iterator(
            ev.jac.nrows(),
            ev.jac.row_iter().map(|r| {
                let m = r.amax();
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            }),
        );
        let merit = |f: &DVector<f64>| f.component_mul(&row_scale).norm_squared();
        let mut phi = merit(&ev.f);
        for it in 0..self.opts.max_iterations {
            if self.converged(&ev) {
                return Ok((x, ev, it));
            }
            let mut a = ev.jac.clone();
            for (i, mut row) in a.row_iter_mut().enumerate() {
                row *= row_scale[i];
            }
            let col_scale: Vec<f64> = a
                .column_iter()
                .map(|c| {
                    let m = c.amax();
                    if m > 0.0 {
                        1.0 / m
                    } else {
                        1.0
                    }
                })
                .collect();
            for (j, mut col) in a.column_iter_mut().enumerate() {
                col *= col_scale[j];
            }
            let rhs = -ev.f.component_mul(&row_scale);
            let singular = |x: &DVector<f64>| Stalled {
                err: ReachError::Singular,
                x: x.clone(),
            };
            let step = a.full_piv_lu().solve(&rhs).ok_or_else(|| singular(&x))?;
            let step = step.component_mul(&DVector::from_vec(col_scale));
            if !step.iter().all(|s| s.is_finite()) {
                return Err(singular(&x));
            }

            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= 1.0 / 1024.0 {
                let trial = &x + &step * alpha;
                if let Ok(tev) = self.evaluate(&trial, true) {
                    let tphi = merit(&tev.f);
                    if tphi.is_finite() && tphi <= (1.0 - 1e-4 * alpha) * phi {
                        x = trial;
                        ev = tev;
                        phi = tphi;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            log::trace!(
                "shooting iteration {it}: alpha {alpha}, merit {phi:e}, residuals {:?}",
                ev.residuals
            );
            if !accepted {
                if self.converged(&ev) {
                    return Ok((x, ev, it + 1));
                }
                return Err(Stalled {
                    err: ReachError::NonConvergence {
                        iterations: it + 1,
                        residual: phi.sqrt(),
                    },
                    x,
                });
            }
        }
        if self.converged(&ev) {
            return Ok((x, ev, self.opts.max_iterations));
        }
        Err(Stalled {
            err: ReachError::NonConvergence {
                iterations: self.opts.max_iterations,
                residual: phi.sqrt(),
            },
            x,
        })
    }

    /// Re-integrates the converged arcs and assembles the solution record.
    fn finish(&self, x: &DVector<f64>, ev: &Eval, iterations: usize) -> Result<BvpSolution, ReachError> {
        let mut nodes = Vec::with_capacity(self.segments());
        let mut samples = Vec::new();
        for m in 0..self.segments() {
            let z = self.node(x, m);
            nodes.push((
                State::from_slice(&z[..6], self.times[m]),
                Costate::from_slice(&z[6..]),
            ));
            let out = propagate_segment(
                self.p,
                self.law,
                &z,
                self.times[m],
                self.times[m + 1],
                false,
                true,
                self.opts,
            )?;
            for (t, z) in out.samples {
                let state = State::from_slice(&z[..6], t);
                let costate = Costate::from_slice(&z[6..]);
                let u = self.law.control(&costate.v)?;
                let hamiltonian = super::hamiltonian_with_control(&state, &costate, &u, self.law, self.p)?;
                samples.push(ArcSample {
                    state,
                    costate,
                    u,
                    hamiltonian,
                });
            }
        }
        let tf = *self.times.last().unwrap();
        let xf = State::from_slice(&ev.end[..6], tf);
        let terminal = SectionPoint {
            x: xf.r.x,
            xdot: xf.v.x,
            z: xf.r.z,
            zdot: xf.v.z,
            t_cross: tf,
            full_state: xf,
        };
        let (angles, beta, cost) = match &self.terminal {
            Terminal::Reach { xn, angles } => (
                Some(*angles),
                self.beta(x).as_slice().to_vec(),
                terminal_cost(&xf, xn),
            ),
            Terminal::Fixed { .. } => (None, Vec::new(), energy(&samples)),
        };
        Ok(BvpSolution {
            law: self.law,
            angles,
            t0: self.times[0],
            t_f: tf,
            nodes,
            beta,
            hamiltonian_variation: hamiltonian_variation(&samples),
            samples,
            terminal,
            cost,
            residuals: ev.residuals,
            iterations,
        })
    }
}

fn energy(samples: &[ArcSample]) -> f64 {
    samples
        .windows(2)
        .map(|w| {
            let dt = w[1].state.t - w[0].state.t;
            0.25 * dt * (w[0].u.norm_squared() + w[1].u.norm_squared())
        })
        .sum()
}

fn hamiltonian_variation(samples: &[ArcSample]) -> f64 {
    let (lo, hi, mag) = samples.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64),
        |(lo, hi, mag), s| (lo.min(s.hamiltonian), hi.max(s.hamiltonian), mag.max(s.hamiltonian.abs())),
    );
    if mag == 0.0 {
        0.0
    } else {
        (hi - lo) / mag
    }
}

fn uniform_times(t0: f64, tf: f64, segments: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..segments)
        .map(|m| t0 + (tf - t0) * m as f64 / segments as f64)
        .collect();
    t.push(tf);
    t
}

/// Uncontrolled reference on a grid refining the segments, with the
/// transition matrices to the final time and trapezoid weights.
struct Linearisation {
    nodes: Vec<State>,
    node_to_final: Vec<Stm>,
    grid: Vec<f64>,
    grid_to_final: Vec<Stm>,
    weights: Vec<f64>,
    final_state: State,
}

/// Sub-intervals per segment for the linearised quadrature.
const LINEAR_SUBSTEPS: usize = 8;

fn linearise(
    x0: &State,
    times: &[f64],
    p: &AsteroidParams,
    opts: &SolverOptions,
) -> Result<Linearisation, ReachError> {
    let popts = opts.propagation();
    let mut grid = Vec::new();
    for w in times.windows(2) {
        for k in 0..LINEAR_SUBSTEPS {
            grid.push(w[0] + (w[1] - w[0]) * k as f64 / LINEAR_SUBSTEPS as f64);
        }
    }
    grid.push(*times.last().unwrap());
    let mut states = vec![*x0];
    let mut steps = Vec::new();
    for w in grid.windows(2) {
        let (s, phi) = propagate_with_stm(states.last().unwrap(), w[1], p, &popts)?;
        states.push(s);
        steps.push(phi);
    }
    let mut to_final = vec![Stm::identity(); grid.len()];
    for k in (0..steps.len()).rev() {
        to_final[k] = to_final[k + 1] * steps[k];
    }
    let mut weights = vec![0.0; grid.len()];
    for (k, w) in grid.windows(2).enumerate() {
        weights[k] += 0.5 * (w[1] - w[0]);
        weights[k + 1] += 0.5 * (w[1] - w[0]);
    }
    let segments = times.len() - 1;
    Ok(Linearisation {
        nodes: (0..segments).map(|m| states[m * LINEAR_SUBSTEPS]).collect(),
        node_to_final: (0..segments).map(|m| to_final[m * LINEAR_SUBSTEPS]).collect(),
        grid,
        grid_to_final: to_final,
        weights,
        final_state: *states.last().unwrap(),
    })
}

fn velocity_input() -> SMatrix<f64, 6, 3> {
    let mut b = SMatrix::<f64, 6, 3>::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).fill_with_identity();
    b
}

impl Linearisation {
    /// Control at every grid point when lambda is the uncontrolled adjoint
    /// of `lf`.
    fn controls(&self, lf: &Vector6<f64>, law: ControlLaw) -> Vec<Vector3<f64>> {
        let b = velocity_input();
        self.grid_to_final
            .iter()
            .map(|psi| {
                let lv = (psi * b).transpose() * lf;
                law.control(&lv).unwrap_or_else(|_| Vector3::zeros())
            })
            .collect()
    }

    /// Packs nodes carrying the linear state response to `controls` and the
    /// adjoint of `lf`.
    fn pack(&self, lf: &Vector6<f64>, controls: &[Vector3<f64>], beta: &[f64]) -> DVector<f64> {
        let b = velocity_input();
        let mapped: Vec<Vector6<f64>> = self
            .grid_to_final
            .iter()
            .zip(controls)
            .map(|(psi, u)| psi * b * u)
            .collect();
        let mut acc = Vector6::zeros();
        let mut cumulative = vec![acc];
        for k in 0..mapped.len() - 1 {
            let dt = self.grid[k + 1] - self.grid[k];
            acc += (mapped[k] + mapped[k + 1]) * (0.5 * dt);
            cumulative.push(acc);
        }
        let nodes: Vec<_> = (0..self.nodes.len())
            .map(|m| {
                let psi = self.node_to_final[m];
                let dx = psi
                    .try_inverse()
                    .map(|inv| inv * cumulative[m * LINEAR_SUBSTEPS])
                    .unwrap_or_else(Vector6::zeros);
                (self.nodes[m].vector() + dx, psi.transpose() * lf)
            })
            .collect();
        pack(&nodes, beta)
    }
}

fn pack(nodes: &[(Vector6<f64>, Vector6<f64>)], beta: &[f64]) -> DVector<f64> {
    let mut x = nodes[0].1.as_slice().to_vec();
    for (s, l) in &nodes[1..] {
        x.extend_from_slice(s.as_slice());
        x.extend_from_slice(l.as_slice());
    }
    x.extend_from_slice(beta);
    DVector::from_vec(x)
}

/// Rows (x, y, z, xdot, zdot) of the state: the terminal quantities that are
/// constrained or scored.
fn terminal_rows() -> SMatrix<f64, 5, 6> {
    let mut p = SMatrix::<f64, 5, 6>::zeros();
    for (row, k) in [0, 1, 2, 3, 5].into_iter().enumerate() {
        p[(row, k)] = 1.0;
    }
    p
}

/// Cold start from the linearised problem. In the linear model the point of
/// the reachable set on the ray along n minimises the support function
/// h(p) = u_m sum w_k |G_k^T p| over normals p = N + E q with N the ray
/// direction and E = [e_y, B] its complement in (x, y, z, xdot, zdot); this
/// is convex in q and solved by damped Newton. With c = h(p*) the terminal
/// costate is -c p* and beta = -c q.
fn reach_guess(lin: &Linearisation, angles: [f64; 3], u_m: f64) -> DVector<f64> {
    let n = direction(angles);
    let basis = orthogonal_basis(&n);
    let rows = terminal_rows();
    let b = velocity_input();
    let gs: Vec<SMatrix<f64, 5, 3>> = lin.grid_to_final.iter().map(|psi| rows * psi * b).collect();
    // Section coordinates (x, z, xdot, zdot) sit at rows 0, 2, 3, 4.
    let embed = |v: &Vector4<f64>| SVector::<f64, 5>::new(v[0], 0.0, v[1], v[2], v[3]);
    let big_n = embed(&n);
    let mut e = SMatrix::<f64, 5, 4>::zeros();
    e[(1, 0)] = 1.0;
    for j in 0..3 {
        e.set_column(j + 1, &embed(&basis.column(j).into_owned()));
    }
    let support = |q: &Vector4<f64>| {
        let p = big_n + e * q;
        let mut h = 0.0;
        let mut g = SVector::<f64, 5>::zeros();
        let mut hess = SMatrix::<f64, 5, 5>::zeros();
        for (gk, w) in gs.iter().zip(&lin.weights) {
            let v = gk.transpose() * p;
            let nv = v.norm();
            if nv > 0.0 {
                let vh = v / nv;
                h += w * nv;
                g += gk * vh * *w;
                hess += gk * (nalgebra::Matrix3::identity() - vh * vh.transpose()) * gk.transpose() * (w / nv);
            }
        }
        (h, e.transpose() * g, e.transpose() * hess * e)
    };

    let mut q = Vector4::zeros();
    let (mut h, mut g, mut hess) = support(&q);
    let mut mu = 1e-8;
    for _ in 0..200 {
        if !(g.norm() > 1e-12 * h) {
            break;
        }
        let d = SMatrix::<f64, 4, 4>::from_diagonal(&hess.diagonal().map(|x| x.max(f64::MIN_POSITIVE)));
        let Some(step) = (hess + d * mu).lu().solve(&-g) else { break };
        let trial = q + step;
        let (ht, gt, hesst) = support(&trial);
        if ht.is_finite() && ht < h {
            q = trial;
            h = ht;
            g = gt;
            hess = hesst;
            mu = (mu * 0.1).max(1e-12);
        } else {
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    let c = u_m * h;
    let p5 = big_n + e * q;
    let lf: Vector6<f64> = -(rows.transpose() * p5) * c;
    let beta = -q * c;
    let controls = lin.controls(&lf, ControlLaw::Bang { u_m });
    lin.pack(&lf, &controls, beta.as_slice())
}

/// Cold start for the fixed-endpoint leg from the minimum-energy solution of
/// the linearised problem.
fn fixed_guess(lin: &Linearisation, xt: &State) -> DVector<f64> {
    let b = velocity_input();
    let mut w = Matrix6::zeros();
    for (psi, wk) in lin.grid_to_final.iter().zip(&lin.weights) {
        let pb = psi * b;
        w += pb * pb.transpose() * *wk;
    }
    let delta = xt.vector() - lin.final_state.vector();
    let nu = w
        .svd(true, true)
        .solve(&-delta, 1e-14 * w.norm())
        .unwrap_or_else(|_| Vector6::zeros());
    let controls = lin.controls(&nu, ControlLaw::MinEnergy { u_m: f64::INFINITY });
    lin.pack(&nu, &controls, &[])
}

/// Multiplicative perturbation of a guess, deterministic in `seed`.
fn perturb(x: &DVector<f64>, seed: u64, scale: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x.map(|v| v * (1.0 + scale * rng.random_range(-1.0..1.0)))
}

/// Terminal multiplier count for a reachability leg.
const N_BETA: usize = 4;

/// Solves the directional reachability problem. `warm` supplies a previous
/// solution (same segment count) as the initial guess; otherwise the
/// linearised cold start is used, followed by seeded perturbations of it.
pub fn solve_reachability_bvp(
    prob: &OcpProblem,
    params: &AsteroidParams,
    opts: &SolverOptions,
    warm: Option<&BvpSolution>,
    seed: u64,
) -> Result<BvpSolution, ReachError> {
    prob.validate()?;
    let times = uniform_times(prob.x0.t, prob.t_f, opts.segments.max(1));
    if prob.u_m == 0.0 {
        return ballistic_solution(prob, &times, params, opts);
    }
    let shooting_at = |u_m: f64| Shooting {
        p: params,
        law: ControlLaw::Bang { u_m },
        x0: prob.x0,
        times: times.clone(),
        terminal: Terminal::Reach {
            xn: prob.x_n,
            angles: prob.angles,
        },
        opts,
    };
    // The stationarity conditions also hold on the far side of the line
    // through x_n; only displacement along +n is accepted.
    let solve_branch = |sh: &Shooting<'_>, x: DVector<f64>| {
        let (x, ev, it) = sh.solve(x).map_err(|s| s.err)?;
        let d = section_selector()
            * (State::from_slice(&ev.end[..6], 0.0).vector() - prob.x_n.vector());
        if direction(prob.angles).dot(&d) < 0.0 {
            return Err(ReachError::NonConvergence {
                iterations: it,
                residual: f64::NAN,
            });
        }
        Ok((x, ev, it))
    };

    let full = shooting_at(prob.u_m);
    if let Some(w) = warm {
        if w.nodes.len() == full.segments() && w.beta.len() == N_BETA {
            let (x, ev, it) = solve_branch(&full, DVector::from_vec(w.unknowns()))?;
            return full.finish(&x, &ev, it);
        }
    }

    // Cold start: continuation in the thrust bound from the nearly linear
    // regime, where the linearised guess is accurate.
    let lin = linearise(&prob.x0, &times, params, opts)?;
    let mut level = CONTINUATION_START;
    let guess = reach_guess(&lin, prob.angles, prob.u_m * level);
    let first = shooting_at(prob.u_m * level);
    let mut current = solve_branch(&first, guess.clone());
    for attempt in 0..COLD_RETRIES {
        if current.is_ok() {
            break;
        }
        current = solve_branch(&first, perturb(&guess, seed.wrapping_add(attempt), 0.3));
    }
    let (mut x, mut ev, mut iterations) = current?;
    let mut factor = 4.0f64;
    while level < 1.0 {
        let next = (level * factor).min(1.0);
        let trial = scale_costates(&x, next / level);
        match solve_branch(&shooting_at(prob.u_m * next), trial) {
            Ok((x2, ev2, it)) => {
                x = x2;
                ev = ev2;
                iterations += it;
                level = next;
                factor = (factor * 1.5).min(10.0);
            }
            Err(e) => {
                factor = factor.sqrt();
                if factor < 1.02 {
                    return Err(e);
                }
            }
        }
    }
    full.finish(&x, &ev, iterations)
}

/// First thrust level of the cold-start continuation, relative to u_m.
const CONTINUATION_START: f64 = 0.01;
/// Seeded perturbations tried when the linearised guess fails.
const COLD_RETRIES: u64 = 2;

/// Multiplies every costate and multiplier in a packed unknown vector.
fn scale_costates(x: &DVector<f64>, k: f64) -> DVector<f64> {
    let mut out = x.clone();
    let n = x.len();
    for v in out.rows_mut(0, 6).iter_mut() {
        *v *= k;
    }
    let mut o = 6;
    while o + 12 <= n {
        for v in out.rows_mut(o + 6, 6).iter_mut() {
            *v *= k;
        }
        o += 12;
    }
    for v in out.rows_mut(o, n - o).iter_mut() {
        *v *= k;
    }
    out
}

fn ballistic_solution(
    prob: &OcpProblem,
    times: &[f64],
    params: &AsteroidParams,
    opts: &SolverOptions,
) -> Result<BvpSolution, ReachError> {
    let law = ControlLaw::Bang { u_m: 0.0 };
    let zero = Costate::default();
    let mut nodes = Vec::new();
    let mut samples = Vec::new();
    let mut z = [0.0; 12];
    z[..6].copy_from_slice(&prob.x0.to_array());
    for w in times.windows(2) {
        nodes.push((State::from_slice(&z[..6], w[0]), zero));
        let out = propagate_segment(params, law, &z, w[0], w[1], false, true, opts)?;
        for (t, y) in out.samples {
            samples.push(ArcSample {
                state: State::from_slice(&y[..6], t),
                costate: zero,
                u: Vector3::zeros(),
                hamiltonian: 0.0,
            });
        }
        z = out.end;
    }
    // The reference crossing is the terminal state by definition.
    let xf = prob.x_n;
    Ok(BvpSolution {
        law,
        angles: Some(prob.angles),
        t0: prob.x0.t,
        t_f: prob.t_f,
        nodes,
        beta: vec![0.0; N_BETA],
        samples,
        terminal: SectionPoint {
            x: xf.r.x,
            xdot: xf.v.x,
            z: xf.r.z,
            zdot: xf.v.z,
            t_cross: xf.t,
            full_state: xf,
        },
        cost: 0.0,
        residuals: Residuals::default(),
        hamiltonian_variation: 0.0,
        iterations: 0,
    })
}

/// Fixed-endpoint leg from `x0` to `xt` at time `t_f` with minimum control
/// energy and the thrust saturated at `u_m`.
pub fn solve_fixed_endpoint_transfer(
    x0: &State,
    xt: &State,
    t_f: f64,
    u_m: f64,
    params: &AsteroidParams,
    opts: &SolverOptions,
) -> Result<BvpSolution, ReachError> {
    if !(t_f > x0.t) {
        return Err(ReachError::InvalidProblem("t_f must follow t0".into()));
    }
    if !(u_m >= 0.0 && u_m.is_finite()) {
        return Err(ReachError::InvalidProblem(format!("u_m = {u_m}")));
    }
    for (name, s) in [("initial", x0), ("final", xt)] {
        if is_interior(&s.r, &params.gravity) {
            return Err(ReachError::InvalidProblem(format!("{name} state is inside the body")));
        }
    }
    let times = uniform_times(x0.t, t_f, opts.segments.max(1));
    let law = ControlLaw::MinEnergy { u_m };
    let shooting = Shooting {
        p: params,
        law,
        x0: *x0,
        times: times.clone(),
        terminal: Terminal::Fixed { xt: *xt },
        opts,
    };
    let lin = linearise(x0, &times, params, opts)?;
    let guess = fixed_guess(&lin, xt);
    match shooting.solve(guess) {
        Ok((x, ev, it)) => shooting.finish(&x, &ev, it),
        // Stagnation is reported as infeasible when the last iterate thrusts
        // at the bound.
        Err(Stalled {
            err: ReachError::NonConvergence { residual, .. },
            x,
        }) if stalled_saturation(&shooting, &x) => Err(ReachError::Infeasible { residual }),
        Err(Stalled {
            err: ReachError::Singular,
            x,
        }) if stalled_saturation(&shooting, &x) => Err(ReachError::Infeasible { residual: f64::NAN }),
        Err(s) => Err(s.err),
    }
}

/// Whether the iterate's control reaches the bound over a large part of the
/// arc.
fn stalled_saturation(shooting: &Shooting<'_>, x: &DVector<f64>) -> bool {
    let u_m = shooting.law.bound();
    let mut total = 0usize;
    let mut saturated = 0usize;
    for m in 0..shooting.segments() {
        let z = shooting.node(x, m);
        let Ok(out) = propagate_segment(
            shooting.p,
            shooting.law,
            &z,
            shooting.times[m],
            shooting.times[m + 1],
            false,
            true,
            shooting.opts,
        ) else {
            continue;
        };
        for (_, y) in out.samples {
            total += 1;
            if Vector3::new(y[9], y[10], y[11]).norm() >= u_m {
                saturated += 1;
            }
        }
    }
    total > 0 && 2 * saturated >= total
}

