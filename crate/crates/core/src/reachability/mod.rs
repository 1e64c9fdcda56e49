//! Reachable sets on the section under bounded thrust, from the indirect
//! optimal-control formulation, and transfers built by chaining them.

mod shooting;
mod sweep;
mod plan;
mod export;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AsteroidParams, DynamicsError, State};
use crate::gravity::{evaluate_field, evaluate_field_with_hessian_derivative, GravityError};
use crate::ode::{OdeError, OdeSystem};
use crate::poincare::{q_matrix, PoincareError, SectionPoint};

pub use shooting::{
    solve_fixed_endpoint_transfer, solve_reachability_bvp, ArcSample, BvpSolution, OcpProblem,
    Residuals, SolverOptions,
};
pub use export::{
    arc_trajectory, write_control_history_csv, write_distance_csv, write_plan,
    write_reachable_set_csv, LegManifest, PlanManifest, SelectedNode, StageManifest,
};
pub use plan::{matching_crossing, plan_transfer, PlanError, PlanOptions, Stage, TransferPlan};
pub use sweep::{
    angle_grid, grid_angles, select_next_stage, sweep_reachable_set, GridNode, NodeOutcome,
    ReachableSet, Selection, SweepOptions, SUCCESS_FRACTION, WARM_RETRIES,
};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

/// Below this |lambda_v| the thrust direction is undefined.
pub const DEGENERATE_COSTATE: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("velocity costate is degenerate (|lambda_v| = {norm:e})")]
    DegenerateCostate { norm: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular shooting Jacobian")]
    Singular,
    #[error("no feasible transfer: residual stalled at {residual:e} with saturated control")]
    Infeasible { residual: f64 },
    #[error("reachable set has no converged node")]
    EmptySet,
    #[error("sweep converged on only {:.0}% of the grid", 100.0 * .converged)]
    SweepFailed { converged: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<GravityError> for ReachError {
    fn from(e: GravityError) -> Self {
        ReachError::Dynamics(DynamicsError::Gravity(e))
    }
}

impl From<OdeError<ReachError>> for ReachError {
    fn from(e: OdeError<ReachError>) -> Self {
        match e {
            OdeError::Rhs { source, .. } => source,
            OdeError::StepSizeUnderflow { t, .. } => {
                ReachError::Dynamics(DynamicsError::StepSizeUnderflow { t })
            }
            OdeError::MaxSteps(n) => ReachError::Dynamics(DynamicsError::MaxSteps(n)),
        }
    }
}

/// Adjoint to (r, v).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Costate {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Costate {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { r, v }
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self {
            r: Vector3::new(y[0], y[1], y[2]),
            v: Vector3::new(y[3], y[4], y[5]),
        }
    }

    pub fn vector(&self) -> Vector6<f64> {
        Vector6::new(self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.vector().iter().all(|c| c.is_finite())
    }
}

/// Thrust law obtained by minimising the Hamiltonian over the admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlLaw {
    /// Full thrust against lambda_v (reachability legs).
    Bang { u_m: f64 },
    /// Minimum energy, u = -lambda_v saturated at u_m (final leg).
    MinEnergy { u_m: f64 },
}

impl ControlLaw {
    pub fn bound(&self) -> f64 {
        match *self {
            ControlLaw::Bang { u_m } | ControlLaw::MinEnergy { u_m } => u_m,
        }
    }

    pub fn control(&self, lv: &Vector3<f64>) -> Result<Vector3<f64>, ReachError> {
        match *self {
            ControlLaw::Bang { u_m } => control_from_costate(lv, u_m),
            ControlLaw::MinEnergy { u_m } => {
                let n = lv.norm();
                Ok(if n <= u_m { -lv } else { -lv * (u_m / n) })
            }
        }
    }

    /// Derivative of the control with respect to lambda_v.
    pub fn jacobian(&self, lv: &Vector3<f64>) -> Matrix3<f64> {
        let n = lv.norm();
        match *self {
            ControlLaw::Bang { u_m } if u_m == 0.0 || n <= DEGENERATE_COSTATE => Matrix3::zeros(),
            ControlLaw::MinEnergy { u_m } if n <= u_m => -Matrix3::identity(),
            ControlLaw::Bang { u_m } | ControlLaw::MinEnergy { u_m } => {
                let h = lv / n;
                -(Matrix3::identity() - h * h.transpose()) * (u_m / n)
            }
        }
    }

    /// Integrand of the objective, zero for the reachability legs.
    pub fn running_cost(&self, u: &Vector3<f64>) -> f64 {
        match self {
            ControlLaw::Bang { .. } => 0.0,
            ControlLaw::MinEnergy { .. } => 0.5 * u.norm_squared(),
        }
    }
}

/// u = -u_m lambda_v / |lambda_v|. A zero bound gives zero control for any
/// costate.
pub fn control_from_costate(lv: &Vector3<f64>, u_m: f64) -> Result<Vector3<f64>, ReachError> {
    if u_m == 0.0 {
        return Ok(Vector3::zeros());
    }
    let n = lv.norm();
    if !(n > DEGENERATE_COSTATE) {
        return Err(ReachError::DegenerateCostate { norm: n });
    }
    Ok(-lv * (u_m / n))
}

/// H = lambda_r . v + lambda_v . (g + C v + u) + L(u).
pub fn hamiltonian_with_control(
    s: &State,
    l: &Costate,
    u: &Vector3<f64>,
    law: ControlLaw,
    p: &AsteroidParams,
) -> Result<f64, ReachError> {
    let (g, _) = p.effective_field(&s.r)?;
    let a = g + p.coriolis() * s.v + u;
    Ok(l.r.dot(&s.v) + l.v.dot(&a) + law.running_cost(u))
}

pub fn hamiltonian(
    s: &State,
    l: &Costate,
    law: ControlLaw,
    p: &AsteroidParams,
) -> Result<f64, ReachError> {
    let u = law.control(&l.v)?;
    hamiltonian_with_control(s, l, &u, law, p)
}

/// State and costate derivative under the reachability law:
/// xdot = dH/dlambda, lambda_r' = -G^T lambda_v, lambda_v' = -lambda_r - C^T lambda_v.
pub fn augmented_derivative(
    s: &State,
    l: &Costate,
    p: &AsteroidParams,
    u_m: f64,
) -> Result<Vec12, ReachError> {
    let mut z = [0.0; 12];
    z[..6].copy_from_slice(&s.to_array());
    z[6..].copy_from_slice(l.vector().as_slice());
    let sys = Augmented {
        p,
        law: ControlLaw::Bang { u_m },
        sens: Sensitivity::None,
    };
    let mut dz = [0.0; 12];
    sys.rhs(s.t, &z, &mut dz)?;
    Ok(Vec12::from_column_slice(&dz))
}

/// Variational quantities carried along with the 12-dimensional system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sensitivity {
    None,
    /// 12x12 Jacobian of the augmented flow.
    Full,
    /// 6x6 state transition matrix with the control held fixed in time.
    #[cfg_attr(not(test), allow(dead_code))]
    State,
}

pub(crate) struct Augmented<'a> {
    pub p: &'a AsteroidParams,
    pub law: ControlLaw,
    pub sens: Sensitivity,
}

impl OdeSystem for Augmented<'_> {
    type Error = ReachError;

    fn dim(&self) -> usize {
        match self.sens {
            Sensitivity::None => 12,
            Sensitivity::Full => 12 + 144,
            Sensitivity::State => 12 + 36,
        }
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ReachError> {
        let r = Vector3::new(y[0], y[1], y[2]);
        let v = Vector3::new(y[3], y[4], y[5]);
        let lr = Vector3::new(y[6], y[7], y[8]);
        let lv = Vector3::new(y[9], y[10], y[11]);
        let (f, t3) = if self.sens == Sensitivity::Full {
            let (f, t3) = evaluate_field_with_hessian_derivative(&r, &lv, &self.p.gravity)?;
            (f, Some(t3))
        } else {
            (evaluate_field(&r, &self.p.gravity)?, None)
        };
        let w2 = self.p.omega() * self.p.omega();
        let g = f.gradient + Vector3::new(w2 * r.x, w2 * r.y, 0.0);
        let gm = self.p.effective_hessian(&f);
        let c = self.p.coriolis();
        let u = self.law.control(&lv)?;
        let a = g + c * v + u;
        let dlr = -gm.transpose() * lv;
        let dlv = -lr - c.transpose() * lv;
        dy[..3].copy_from_slice(v.as_slice());
        dy[3..6].copy_from_slice(a.as_slice());
        dy[6..9].copy_from_slice(dlr.as_slice());
        dy[9..12].copy_from_slice(dlv.as_slice());

        match self.sens {
            Sensitivity::None => {}
            Sensitivity::Full => {
                let mut m = Mat12::zeros();
                m.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
                m.fixed_view_mut::<3, 3>(3, 0).copy_from(&gm);
                m.fixed_view_mut::<3, 3>(3, 3).copy_from(&c);
                m.fixed_view_mut::<3, 3>(3, 9).copy_from(&self.law.jacobian(&lv));
                m.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-t3.unwrap()));
                m.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-gm.transpose()));
                m.fixed_view_mut::<3, 3>(9, 6).copy_from(&(-Matrix3::identity()));
                m.fixed_view_mut::<3, 3>(9, 9).copy_from(&(-c.transpose()));
                let psi = Mat12::from_column_slice(&y[12..156]);
                dy[12..156].copy_from_slice((m * psi).as_slice());
            }
            Sensitivity::State => {
                let mut m = SMatrix::<f64, 6, 6>::zeros();
                m.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
                m.fixed_view_mut::<3, 3>(3, 0).copy_from(&gm);
                m.fixed_view_mut::<3, 3>(3, 3).copy_from(&c);
                let phi = SMatrix::<f64, 6, 6>::from_column_slice(&y[12..48]);
                dy[12..48].copy_from_slice((m * phi).as_slice());
            }
        }
        Ok(())
    }
}

/// Indices of (x, z, xdot, zdot) in the state vector.
pub const SECTION_INDICES: [usize; 4] = [0, 2, 3, 5];

/// Selector S with d = S (x_f - x_n).
pub fn section_selector() -> SMatrix<f64, 4, 6> {
    let mut s = SMatrix::<f64, 4, 6>::zeros();
    for (row, &k) in SECTION_INDICES.iter().enumerate() {
        s[(row, k)] = 1.0;
    }
    s
}

/// Unit direction on S^3 for phi1, phi2 in [0, pi) and phi3 in [0, 2pi),
/// in difference-state order (dx, dz, dxdot, dzdot).
pub fn direction(phi: [f64; 3]) -> Vector4<f64> {
    let [a, b, c] = phi;
    Vector4::new(
        a.cos(),
        a.sin() * b.cos(),
        a.sin() * b.sin() * c.cos(),
        a.sin() * b.sin() * c.sin(),
    )
}

/// Orthonormal basis of the complement of unit `n`, from the Householder
/// reflection that maps `n` onto a coordinate axis.
pub fn orthogonal_basis(n: &Vector4<f64>) -> SMatrix<f64, 4, 3> {
    let sign = if n[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = *n;
    w[0] += sign;
    let h = SMatrix::<f64, 4, 4>::identity() - w * w.transpose() * (2.0 / w.norm_squared());
    h.fixed_columns::<3>(1).into_owned()
}

/// J = -1/2 (x_f - x_n)^T Q (x_f - x_n).
pub fn terminal_cost(xf: &State, xn: &State) -> f64 {
    let d = xf.vector() - xn.vector();
    -0.5 * d.dot(&(q_matrix() * d))
}

/// Terminal conditions of the reachability problem, stacked as
/// `[y_f, B^T d (3), lambda_f - (dphi/dx + beta^T dm/dx) (6)]` with the
/// constraints m = (y, B^T S (x - x_n)).
pub fn terminal_residuals(
    xf: &State,
    lf: &Costate,
    xn: &State,
    phi: [f64; 3],
    beta: &Vector4<f64>,
) -> SVector<f64, 10> {
    let b = orthogonal_basis(&direction(phi));
    let s = section_selector();
    let delta = xf.vector() - xn.vector();
    let d = s * delta;
    let bd = b.transpose() * d;
    let mut expected = -(q_matrix() * delta) + s.transpose() * (b * beta.fixed_rows::<3>(1));
    expected[1] += beta[0];
    let tr = lf.vector() - expected;
    let mut out = SVector::<f64, 10>::zeros();
    out[0] = xf.r.y;
    out.fixed_rows_mut::<3>(1).copy_from(&bd);
    out.fixed_rows_mut::<6>(4).copy_from(&tr);
    out
}

/// Weighted section distance, d = sqrt(sum k_i (p_i - t_i)^2) over
/// (x, z, xdot, zdot).
pub fn distance_on_section(p: &SectionPoint, target: &SectionPoint, k: &[f64; 4]) -> f64 {
    let d = p.coords() - target.coords();
    (0..4).map(|i| k[i] * d[i] * d[i]).sum::<f64>().sqrt()
}
