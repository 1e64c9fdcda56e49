//! Spacecraft motion in the uniformly rotating body-fixed frame.
//!
//! State order is (x, y, z, vx, vy, vz) in km and km/s. The body spins about
//! +z at rate omega; the effective field is g = grad U + omega^2 (x, y, 0) and
//! the Coriolis term is h = (2 omega vy, -2 omega vx, 0).

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gravity::{evaluate_field, is_interior, FieldEvaluation, GravityError, GravityModel};
use crate::ode::{self, Control, Dense, OdeError, OdeSystem};

pub type Stm = Matrix6<f64>;

/// Time-dependent control acceleration (km/s^2), evaluated at absolute time.
pub type ControlFn<'a> = &'a (dyn Fn(f64) -> Vector3<f64> + Sync);

/// Spin rate (rad/s) for a rotation period in hours.
pub fn spin_rate_from_period_hours(hours: f64) -> f64 {
    2.0 * std::f64::consts::PI / (hours * 3600.0)
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Gravity(#[from] GravityError),
    #[error("spin rate must be positive and finite, got {0}")]
    InvalidSpinRate(f64),
    #[error("integration step size underflow at t = {t} s")]
    StepSizeUnderflow { t: f64 },
    #[error("integration exceeded {0} steps")]
    MaxSteps(usize),
    #[error("no transversal section crossing within {span} s")]
    NoCrossing { span: f64 },
    #[error("trajectory collided with the body at t = {t} s")]
    Collision { t: f64 },
    #[error("trajectory escaped beyond {radius} km at t = {t} s")]
    Escape { t: f64, radius: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<OdeError<DynamicsError>> for DynamicsError {
    fn from(e: OdeError<DynamicsError>) -> Self {
        match e {
            OdeError::Rhs { source, .. } => source,
            OdeError::StepSizeUnderflow { t, .. } => DynamicsError::StepSizeUnderflow { t },
            OdeError::MaxSteps(n) => DynamicsError::MaxSteps(n),
        }
    }
}

/// Gravity model plus uniform spin about the body z axis.
#[derive(Debug, Clone)]
pub struct AsteroidParams {
    pub gravity: Arc<GravityModel>,
    omega: f64,
    escape_radius: f64,
}

impl AsteroidParams {
    pub fn new(gravity: Arc<GravityModel>, omega: f64) -> Result<Self, DynamicsError> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(DynamicsError::InvalidSpinRate(omega));
        }
        let escape_radius = 30.0 * gravity.geometry().circumscribing_radius;
        Ok(Self {
            gravity,
            omega,
            escape_radius,
        })
    }

    /// Distance (km) beyond which a trajectory is treated as escaped.
    pub fn with_escape_radius(mut self, radius: f64) -> Self {
        self.escape_radius = radius;
        self
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn escape_radius(&self) -> f64 {
        self.escape_radius
    }

    /// Gravity plus centrifugal acceleration and the field evaluation used.
    pub fn effective_field(
        &self,
        r: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, FieldEvaluation), GravityError> {
        let f = evaluate_field(r, &self.gravity)?;
        let w2 = self.omega * self.omega;
        Ok((f.gradient + Vector3::new(w2 * r.x, w2 * r.y, 0.0), f))
    }

    /// Coriolis matrix C with h = C v.
    pub fn coriolis(&self) -> Matrix3<f64> {
        let w = 2.0 * self.omega;
        Matrix3::new(0.0, w, 0.0, -w, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    /// Position block of the variational matrix: grad grad U + omega^2 diag(1, 1, 0).
    pub fn effective_hessian(&self, f: &FieldEvaluation) -> Matrix3<f64> {
        let w2 = self.omega * self.omega;
        f.hessian + Matrix3::from_diagonal(&Vector3::new(w2, w2, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// km.
    pub r: Vector3<f64>,
    /// km/s.
    pub v: Vector3<f64>,
    /// s.
    pub t: f64,
}

impl State {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, t: f64) -> Self {
        Self { r, v, t }
    }

    /// From (x, y, z, vx, vy, vz).
    pub fn from_slice(y: &[f64], t: f64) -> Self {
        Self {
            r: Vector3::new(y[0], y[1], y[2]),
            v: Vector3::new(y[3], y[4], y[5]),
            t,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn vector(&self) -> Vector6<f64> {
        Vector6::from_row_slice(&self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite()) && self.t.is_finite()
    }
}

/// Time derivative of the state under control acceleration `u` (km/s^2).
pub fn state_derivative(
    s: &State,
    u: &Vector3<f64>,
    p: &AsteroidParams,
) -> Result<Vector6<f64>, GravityError> {
    let (g, _) = p.effective_field(&s.r)?;
    let a = g + p.coriolis() * s.v + u;
    Ok(Vector6::new(s.v.x, s.v.y, s.v.z, a.x, a.y, a.z))
}

/// J = omega^2 (x^2 + y^2) / 2 + U - |v|^2 / 2, km^2/s^2.
pub fn jacobi_constant(s: &State, p: &AsteroidParams) -> Result<f64, GravityError> {
    let u = evaluate_field(&s.r, &p.gravity)?.potential;
    Ok(jacobi_from_potential(s, u, p.omega))
}

fn jacobi_from_potential(s: &State, u: f64, omega: f64) -> f64 {
    0.5 * omega * omega * (s.r.x * s.r.x + s.r.y * s.r.y) + u - 0.5 * s.v.norm_squared()
}

/// Variational matrix A of the uncontrolled flow at `r`.
pub fn variational_matrix(r: &Vector3<f64>, p: &AsteroidParams) -> Result<Matrix6<f64>, GravityError> {
    let f = evaluate_field(r, &p.gravity)?;
    Ok(assemble_a(&p.effective_hessian(&f), &p.coriolis()))
}

fn assemble_a(g: &Matrix3<f64>, c: &Matrix3<f64>) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(g);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(c);
    a
}

/// d(Phi)/dt = A(s) Phi.
pub fn variational_derivative(
    s: &State,
    phi: &Stm,
    p: &AsteroidParams,
) -> Result<Stm, GravityError> {
    Ok(variational_matrix(&s.r, p)? * phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingDirection {
    /// vy > 0 at the crossing.
    Positive,
    /// vy < 0 at the crossing.
    Negative,
}

impl CrossingDirection {
    pub fn of(vy: f64) -> Self {
        if vy > 0.0 {
            CrossingDirection::Positive
        } else {
            CrossingDirection::Negative
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            CrossingDirection::Positive => 1,
            CrossingDirection::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Position in the sequence of recorded crossings, from 0.
    pub index: usize,
    pub state: State,
    pub direction: CrossingDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Crossing(Crossing),
    Collision(State),
    Escape(State),
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    /// Accepted step endpoints, starting with the initial state.
    pub states: Vec<State>,
    /// Per-step continuous extension (position/velocity only); empty unless
    /// dense output was requested.
    pub dense: Vec<Dense>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn crossings(&self) -> impl Iterator<Item = &Crossing> {
        self.events.iter().filter_map(|e| match e {
            Event::Crossing(c) => Some(c),
            _ => None,
        })
    }

    pub fn collided(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Collision(_)))
    }

    pub fn escaped(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Escape(_)))
    }

    /// Interpolated state; `None` without dense output or outside the span.
    pub fn state_at(&self, t: f64) -> Option<State> {
        let epoch = self.states.first()?.t;
        let tau = t - epoch;
        let seg = self.dense.iter().find(|d| {
            let (a, b) = (d.t0.min(d.t1()), d.t0.max(d.t1()));
            tau >= a && tau <= b
        })?;
        Some(State::from_slice(&seg.state(tau)[..6], t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Time span searched for section crossings, s.
    pub max_time: f64,
    pub check_collision: bool,
    /// Keep per-step dense output in the trajectory.
    pub dense: bool,
    /// Minimum |vy| (km/s) for a crossing to count as transversal.
    pub transversality: f64,
    /// Crossing refinement tolerance on |y|, km.
    pub crossing_tol: f64,
    pub max_steps: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            max_time: 1e6,
            check_collision: true,
            dense: false,
            transversality: 1e-8,
            crossing_tol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

impl PropagationOptions {
    pub fn tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }

    fn ode(&self) -> ode::Options {
        ode::Options {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            error_dim: Some(6),
            ..ode::Options::default()
        }
    }
}

/// Uncontrolled or controlled flow, optionally carrying the STM (column-major
/// after the state). Time inside the integrator is measured from `epoch`.
struct Flow<'a> {
    p: &'a AsteroidParams,
    control: Option<ControlFn<'a>>,
    epoch: f64,
    stm: bool,
}

impl OdeSystem for Flow<'_> {
    type Error = DynamicsError;

    fn dim(&self) -> usize {
        if self.stm {
            42
        } else {
            6
        }
    }

    fn rhs(&self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<(), DynamicsError> {
        let r = Vector3::new(y[0], y[1], y[2]);
        let v = Vector3::new(y[3], y[4], y[5]);
        let (g, f) = self.p.effective_field(&r)?;
        let mut a = g + self.p.coriolis() * v;
        if let Some(u) = self.control {
            a += u(self.epoch + tau);
        }
        dy[..3].copy_from_slice(v.as_slice());
        dy[3..6].copy_from_slice(a.as_slice());
        if self.stm {
            let am = assemble_a(&self.p.effective_hessian(&f), &self.p.coriolis());
            let phi = Matrix6::from_column_slice(&y[6..42]);
            dy[6..42].copy_from_slice((am * phi).as_slice());
        }
        Ok(())
    }
}

/// Illinois false-position root of `f` on a sign-changing bracket. Iterates
/// until the abscissa stops moving, so the root is converged in time rather
/// than only to a residual tolerance.
pub(crate) fn bracket_root(
    f: impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
) -> f64 {
    if fa == 0.0 {
        return a;
    }
    let mut side = 0;
    let mut prev = f64::NAN;
    for _ in 0..200 {
        if fb == 0.0 {
            return b;
        }
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && (c - a) * (c - b) <= 0.0 {
            c
        } else {
            0.5 * (a + b)
        };
        let fc = f(c);
        let scale = 4.0 * f64::EPSILON * c.abs().max(1.0);
        if fc == 0.0 || (b - a).abs() <= scale || (c - prev).abs() <= scale {
            return c;
        }
        prev = c;
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            side = 0;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    b
}

struct Run {
    trajectory: Trajectory,
    /// Crossings with their full integrator vector (state plus STM if carried).
    crossings: Vec<(Crossing, Vec<f64>)>,
    final_y: Vec<f64>,
}

struct RunSpec {
    span: f64,
    stop_after: Option<usize>,
    record: bool,
}

fn run(
    flow: &Flow<'_>,
    s0: &State,
    spec: RunSpec,
    opts: &PropagationOptions,
) -> Result<Run, DynamicsError> {
    let mut y0 = s0.to_array().to_vec();
    if flow.stm {
        y0.extend_from_slice(Stm::identity().as_slice());
    }
    let epoch = s0.t;
    let p = flow.p;
    let mut traj = Trajectory {
        states: vec![*s0],
        ..Trajectory::default()
    };
    let mut crossings: Vec<(Crossing, Vec<f64>)> = Vec::new();
    let escape = p.escape_radius;

    let outcome = ode::integrate(flow, 0.0, &y0, spec.span, &opts.ode(), |step| {
        let (t0, t1) = (step.t0, step.t1);
        let (ya, yb) = (step.y0[1], step.y1[1]);
        let end = State::from_slice(step.y1, epoch + t1);
        let needs_dense = spec.record && opts.dense;
        let crossed = ya * yb < 0.0 || (yb == 0.0 && ya != 0.0);

        if crossed || needs_dense {
            let dense = step.dense().map_err(DynamicsError::from)?.clone();
            if crossed {
                let tc = if yb == 0.0 {
                    t1
                } else {
                    bracket_root(|t| dense.component(t, 1), t0, t1, ya, yb)
                };
                let yc = dense.state(tc);
                if yc[1].abs() >= opts.crossing_tol {
                    log::warn!("crossing refinement left |y| = {:e} km", yc[1].abs());
                }
                if yc[4].abs() > opts.transversality {
                    let crossing = Crossing {
                        index: crossings.len(),
                        state: State::from_slice(&yc, epoch + tc),
                        direction: CrossingDirection::of(yc[4]),
                    };
                    if spec.record {
                        traj.events.push(Event::Crossing(crossing));
                    }
                    crossings.push((crossing, yc));
                }
            }
            if needs_dense {
                traj.dense.push(dense);
            }
        }
        if spec.record {
            traj.states.push(end);
        }
        if let Some(n) = spec.stop_after {
            if crossings.len() >= n {
                return Ok(Control::Stop);
            }
        }
        if opts.check_collision && is_interior(&end.r, &p.gravity) {
            traj.events.push(Event::Collision(end));
            return Ok(Control::Stop);
        }
        if end.r.norm() > escape {
            traj.events.push(Event::Escape(end));
            return Ok(Control::Stop);
        }
        Ok(Control::Continue)
    })?;

    if !spec.record {
        traj.states.push(State::from_slice(&outcome.y, epoch + outcome.t));
    }
    Ok(Run {
        trajectory: traj,
        crossings,
        final_y: outcome.y,
    })
}

/// Propagates `s0` to absolute time `tf` (forward or backward). Collision and
/// escape end the trajectory early and are recorded as events.
pub fn propagate(
    s0: &State,
    tf: f64,
    control: Option<ControlFn<'_>>,
    p: &AsteroidParams,
    opts: &PropagationOptions,
) -> Result<Trajectory, DynamicsError> {
    let flow = Flow {
        p,
        control,
        epoch: s0.t,
        stm: false,
    };
    let spec = RunSpec {
        span: tf - s0.t,
        stop_after: None,
        record: true,
    };
    Ok(run(&flow, s0, spec, opts)?.trajectory)
}

/// Uncontrolled propagation until `max_crossings` transversal crossings of
/// y = 0 have been found or `opts.max_time` has elapsed. Both crossing
/// directions are recorded.
pub fn propagate_to_section(
    s0: &State,
    p: &AsteroidParams,
    max_crossings: usize,
    opts: &PropagationOptions,
) -> Result<(Trajectory, Vec<Crossing>), DynamicsError> {
    let flow = Flow {
        p,
        control: None,
        epoch: s0.t,
        stm: false,
    };
    let spec = RunSpec {
        span: opts.max_time,
        stop_after: Some(max_crossings),
        record: true,
    };
    let out = run(&flow, s0, spec, opts)?;
    let crossings: Vec<Crossing> = out.crossings.iter().map(|c| c.0).collect();
    if crossings.is_empty() {
        return Err(terminal_error(&out.trajectory, opts.max_time, p));
    }
    Ok((out.trajectory, crossings))
}

fn terminal_error(traj: &Trajectory, span: f64, p: &AsteroidParams) -> DynamicsError {
    for e in &traj.events {
        match e {
            Event::Collision(s) => return DynamicsError::Collision { t: s.t },
            Event::Escape(s) => {
                return DynamicsError::Escape {
                    t: s.t,
                    radius: p.escape_radius,
                }
            }
            Event::Crossing(_) => {}
        }
    }
    DynamicsError::NoCrossing { span }
}

/// State and STM at absolute time `tf`.
pub fn propagate_with_stm(
    s0: &State,
    tf: f64,
    p: &AsteroidParams,
    opts: &PropagationOptions,
) -> Result<(State, Stm), DynamicsError> {
    let flow = Flow {
        p,
        control: None,
        epoch: s0.t,
        stm: true,
    };
    let spec = RunSpec {
        span: tf - s0.t,
        stop_after: None,
        record: false,
    };
    let out = run(&flow, s0, spec, opts)?;
    if let Some(e) = out.trajectory.events.first() {
        return Err(terminal_error_from(e, p));
    }
    Ok((
        State::from_slice(&out.final_y, tf),
        Stm::from_column_slice(&out.final_y[6..42]),
    ))
}

fn terminal_error_from(e: &Event, p: &AsteroidParams) -> DynamicsError {
    match e {
        Event::Collision(s) => DynamicsError::Collision { t: s.t },
        Event::Escape(s) => DynamicsError::Escape {
            t: s.t,
            radius: p.escape_radius,
        },
        Event::Crossing(c) => DynamicsError::NoCrossing { span: c.state.t },
    }
}

/// The first `n` transversal crossings, each with the STM from `s0`.
pub fn section_crossings_with_stm(
    s0: &State,
    p: &AsteroidParams,
    n: usize,
    opts: &PropagationOptions,
) -> Result<Vec<(Crossing, Stm)>, DynamicsError> {
    let flow = Flow {
        p,
        control: None,
        epoch: s0.t,
        stm: true,
    };
    let spec = RunSpec {
        span: opts.max_time,
        stop_after: Some(n),
        record: false,
    };
    let out = run(&flow, s0, spec, opts)?;
    if out.crossings.len() < n {
        return Err(out
            .trajectory
            .events
            .iter()
            .find(|e| !matches!(e, Event::Crossing(_)))
            .map(|e| terminal_error_from(e, p))
            .unwrap_or(DynamicsError::NoCrossing { span: opts.max_time }));
    }
    Ok(out
        .crossings
        .into_iter()
        .map(|(c, y)| (c, Stm::from_column_slice(&y[6..42])))
        .collect())
}

/// Writes `t,x,y,z,vx,vy,vz,J` rows for every stored state.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    p: &AsteroidParams,
    out: W,
) -> Result<(), DynamicsError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DynamicsError::Io(e.to_string());
    w.write_record(["t", "x", "y", "z", "vx", "vy", "vz", "J"]).map_err(io)?;
    for s in &traj.states {
        let j = jacobi_constant(s, p)?;
        let mut row = vec![s.t];
        row.extend_from_slice(&s.to_array());
        row.push(j);
        w.write_record(row.iter().map(|x| format!("{x:e}"))).map_err(io)?;
    }
    w.flush().map_err(|e| DynamicsError::Io(e.to_string()))
}

/// Writes one row per recorded crossing: index, time, section coordinates
/// and the sign of vy.
pub fn write_events_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), DynamicsError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DynamicsError::Io(e.to_string());
    w.write_record(["index", "t", "x", "xdot", "z", "zdot", "ydot_sign"]).map_err(io)?;
    for c in traj.crossings() {
        let s = &c.state;
        w.write_record([
            c.index.to_string(),
            format!("{:e}", s.t),
            format!("{:e}", s.r.x),
            format!("{:e}", s.v.x),
            format!("{:e}", s.r.z),
            format!("{:e}", s.v.z),
            c.direction.sign().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| DynamicsError::Io(e.to_string()))
}
