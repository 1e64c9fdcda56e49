//! Section y = 0: projection, return map and periodic-orbit correction.

use std::io::{Read, Write};

use nalgebra::{Matrix6, SMatrix, SVector, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    jacobi_constant, propagate_to_section, propagate_with_stm, section_crossings_with_stm,
    state_derivative, Crossing, DynamicsError, AsteroidParams, PropagationOptions, State, Stm,
};
use crate::gravity::GravityError;
use crate::shape::LengthUnit;

/// Tolerance on |y| for a state to count as lying on the section, km.
pub const SECTION_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PoincareError {
    #[error("state is not on the section: |y| = {y:e} km")]
    NotOnSection { y: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Gravity(#[from] GravityError),
    #[error("differential correction did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular correction matrix")]
    Singular,
    #[error("catalog: {0}")]
    Catalog(String),
}

/// Coordinates (x, xdot, z, zdot) of a section crossing together with the
/// full state it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub x: f64,
    pub xdot: f64,
    pub z: f64,
    pub zdot: f64,
    pub t_cross: f64,
    pub full_state: State,
}

impl SectionPoint {
    /// Difference-state ordering (x, z, xdot, zdot).
    pub fn coords(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.z, self.xdot, self.zdot)
    }

    /// State with y = ydot = 0 built from the section coordinates.
    pub fn embed(&self) -> State {
        State::new(
            Vector3::new(self.x, 0.0, self.z),
            Vector3::new(self.xdot, 0.0, self.zdot),
            self.t_cross,
        )
    }
}

/// Projection diag[1 0 1 1 0 1] onto the section coordinates.
pub fn q_matrix() -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::new(1.0, 0.0, 1.0, 1.0, 0.0, 1.0))
}

pub fn project_to_section(s: &State) -> Result<SectionPoint, PoincareError> {
    if !(s.r.y.abs() < SECTION_TOL) {
        return Err(PoincareError::NotOnSection { y: s.r.y });
    }
    Ok(SectionPoint {
        x: s.r.x,
        xdot: s.v.x,
        z: s.r.z,
        zdot: s.v.z,
        t_cross: s.t,
        full_state: *s,
    })
}

/// Next transversal crossing of the uncontrolled flow from `p0`.
pub fn poincare_map(
    p0: &SectionPoint,
    params: &AsteroidParams,
    opts: &PropagationOptions,
) -> Result<SectionPoint, PoincareError> {
    // Start exactly on y = 0 so the departure itself is not seen as a crossing.
    let mut s0 = p0.full_state;
    s0.r.y = 0.0;
    let (_, crossings) = propagate_to_section(&s0, params, 1, opts)?;
    project_to_section(&crossings[0].state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub initial: State,
    /// Time of the second section crossing, s.
    pub period: f64,
    pub jacobi: f64,
    pub monodromy: Stm,
    /// The two crossings within one period; the second closes the orbit.
    pub crossings: Vec<Crossing>,
}

impl PeriodicOrbit {
    /// Norm of flow(T, x0) - x0 over position and velocity.
    pub fn return_error(&self) -> f64 {
        let last = self.crossings.last().map(|c| c.state).unwrap_or(self.initial);
        (last.vector() - self.initial.vector()).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub propagation: PropagationOptions,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 40,
            propagation: PropagationOptions::tolerance(1e-13),
        }
    }
}

/// Free coordinates of the guess that the corrector updates.
const FREE: [usize; 4] = [0, 2, 3, 5];

/// Differential correction on the section. The guess is placed on y = 0 and
/// (x, z, xdot, zdot, T) are updated by damped Gauss-Newton on the six-state
/// return residual with ydot held fixed. The Jacobi constant is left free.
pub fn correct_periodic_orbit(
    guess: &State,
    params: &AsteroidParams,
    opts: &CorrectorOptions,
) -> Result<PeriodicOrbit, PoincareError> {
    let mut x0 = *guess;
    x0.r.y = 0.0;
    x0.t = 0.0;
    let popts = &opts.propagation;
    let first = section_crossings_with_stm(&x0, params, 2, popts)?;
    let mut period = first[1].0.state.t;

    // Velocity residuals are weighted by the rotation time scale so that both
    // halves of the residual are in km.
    let vscale = 1.0 / params.omega();
    let weights = Vector6::new(1.0, 1.0, 1.0, vscale, vscale, vscale);

    let residual = |x0: &State, period: f64| -> Result<(Vector6<f64>, Stm, State), PoincareError> {
        let (xf, phi) = propagate_with_stm(x0, period, params, popts)?;
        Ok((xf.vector() - x0.vector(), phi, xf))
    };

    let (mut res, mut phi, mut xf) = residual(&x0, period)?;
    let mut norm = res.norm();
    for it in 0..opts.max_iterations {
        log::debug!("corrector iteration {it}: residual {norm:e}, period {period}");
        if norm < opts.tolerance {
            return finish(x0, period, params, popts);
        }
        let f = state_derivative(&xf, &Vector3::zeros(), params)?;
        let mut jac = SMatrix::<f64, 6, 5>::zeros();
        for (col, &k) in FREE.iter().enumerate() {
            let mut c = phi.column(k).into_owned();
            c[k] -= 1.0;
            jac.set_column(col, &c);
        }
        jac.set_column(4, &f);
        let jw = Matrix6::from_diagonal(&weights) * jac;
        // Column scaling keeps position, velocity and time comparable.
        let cs = SVector::<f64, 5>::from_fn(|j, _| jw.column(j).norm().max(f64::MIN_POSITIVE));
        let js = jw * SMatrix::<f64, 5, 5>::from_diagonal(&cs.map(|c| 1.0 / c));
        let svd = js.svd(true, true);
        if svd.singular_values.max() == 0.0
            || svd.singular_values.min() < 1e-14 * svd.singular_values.max()
        {
            return Err(PoincareError::Singular);
        }
        let rhs = -weights.component_mul(&res);
        let step = svd.solve(&rhs, 0.0).map_err(|_| PoincareError::Singular)?;
        let step = step.component_div(&cs);

        let mut lambda = 1.0;
        loop {
            let mut trial = x0;
            for (col, &k) in FREE.iter().enumerate() {
                let mut v = trial.vector();
                v[k] += lambda * step[col];
                trial = State::from_slice(v.as_slice(), 0.0);
            }
            let tp = period + lambda * step[4];
            match residual(&trial, tp) {
                Ok((r, p2, f2)) if tp > 0.0 && r.norm() < norm => {
                    x0 = trial;
                    period = tp;
                    res = r;
                    phi = p2;
                    xf = f2;
                    norm = res.norm();
                    break;
                }
                _ if lambda > 1e-4 => lambda *= 0.5,
                _ => {
                    return Err(PoincareError::NoConvergence {
                        iterations: it + 1,
                        residual: norm,
                    })
                }
            }
        }
    }
    if norm < opts.tolerance {
        return finish(x0, period, params, popts);
    }
    Err(PoincareError::NoConvergence {
        iterations: opts.max_iterations,
        residual: norm,
    })
}

fn finish(
    x0: State,
    period: f64,
    params: &AsteroidParams,
    popts: &PropagationOptions,
) -> Result<PeriodicOrbit, PoincareError> {
    let (xf, monodromy) = propagate_with_stm(&x0, period, params, popts)?;
    // Crossings from the event search; the closing crossing is taken at the
    // corrected period so that it matches the return used for convergence.
    let (_, mut crossings) = propagate_to_section(&x0, params, 2, popts)?;
    if crossings.len() == 2 {
        crossings[1].state = xf;
    }
    Ok(PeriodicOrbit {
        initial: x0,
        period,
        jacobi: jacobi_constant(&x0, params)?,
        monodromy,
        crossings,
    })
}

/// One catalog row: a named orbit with initial state, period and Jacobi
/// constant. Lengths are in `unit`, velocities in `unit`/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub unit: LengthUnit,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub period: f64,
    pub jacobi: f64,
}

impl CatalogEntry {
    pub fn from_orbit(name: &str, orbit: &PeriodicOrbit) -> Self {
        let s = orbit.initial.to_array();
        Self {
            name: name.to_string(),
            unit: LengthUnit::Km,
            x: s[0],
            y: s[1],
            z: s[2],
            vx: s[3],
            vy: s[4],
            vz: s[5],
            period: orbit.period,
            jacobi: orbit.jacobi,
        }
    }

    /// Initial state converted to km and km/s.
    pub fn state(&self) -> State {
        let k = self.unit.to_km();
        State::from_slice(
            &[self.x, self.y, self.z, self.vx, self.vy, self.vz].map(|c| c * k),
            0.0,
        )
    }
}

pub fn write_catalog<W: Write>(entries: &[CatalogEntry], out: W) -> Result<(), PoincareError> {
    let mut w = csv::Writer::from_writer(out);
    for e in entries {
        w.serialize(e).map_err(|e| PoincareError::Catalog(e.to_string()))?;
    }
    w.flush().map_err(|e| PoincareError::Catalog(e.to_string()))
}

pub fn read_catalog<R: Read>(input: R) -> Result<Vec<CatalogEntry>, PoincareError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| PoincareError::Catalog(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{initial_state, target_state};
    use crate::testing::params;

    fn max_eig_gap_pair(m: &Stm) -> (f64, f64) {
        let mut d: Vec<f64> = m
            .complex_eigenvalues()
            .iter()
            .map(|l| (l - nalgebra::Complex::new(1.0, 0.0)).norm())
            .collect();
        d.sort_by(f64::total_cmp);
        (d[0], d[1])
    }

    #[test]
    fn projection_selects_section_coordinates() {
        let s = State::from_slice(&[1.0, 0.0, 2.0, 3.0, 4.0, 5.0], 7.0);
        let p = project_to_section(&s).unwrap();
        assert_eq!((p.x, p.xdot, p.z, p.zdot, p.t_cross), (1.0, 3.0, 2.0, 5.0, 7.0));
        let q = q_matrix() * Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(q, Vector6::new(1.0, 0.0, 3.0, 4.0, 0.0, 6.0));
        let again = project_to_section(&p.embed()).unwrap();
        assert_eq!(again.coords(), p.coords());
        assert_eq!(project_to_section(&again.embed()).unwrap(), again);
    }

    #[test]
    fn off_section_state_is_rejected() {
        let s = State::from_slice(&[1.0, 1e-9, 0.0, 0.0, 1.0, 0.0], 0.0);
        assert!(matches!(project_to_section(&s), Err(PoincareError::NotOnSection { .. })));
    }

    #[test]
    fn map_of_initial_crossing_stays_near_orbit_radius() {
        let p0 = project_to_section(&initial_state()).unwrap();
        let p1 = poincare_map(&p0, params(), &PropagationOptions::default()).unwrap();
        let r = p1.full_state.r.norm();
        assert!(r > 1.2 && r < 1.8, "radius {r}");
        assert!(p1.t_cross > 0.0);
    }

    #[test]
    fn hyperbolic_point_escapes() {
        let s = State::from_slice(&[3.0, 0.0, 0.0, 0.0, 0.05, 0.0], 0.0);
        let p0 = project_to_section(&s).unwrap();
        let err = poincare_map(&p0, params(), &PropagationOptions::default()).unwrap_err();
        assert!(matches!(err, PoincareError::Dynamics(DynamicsError::Escape { .. })));
    }

    fn check_orbit(orbit: &PeriodicOrbit) {
        let p = params();
        let popts = PropagationOptions::tolerance(1e-13);
        // Independent oracle: plain propagation without the STM.
        let tr = crate::dynamics::propagate(&orbit.initial, orbit.period, None, p, &popts).unwrap();
        let err = (tr.final_state().vector() - orbit.initial.vector()).norm();
        assert!(err < 1e-8, "return error {err:e}");
        let det = orbit.monodromy.determinant();
        assert!((det - 1.0).abs() < 1e-6, "det {det}");
        let (a, b) = max_eig_gap_pair(&orbit.monodromy);
        assert!(a < 1e-4 && b < 1e-4, "unit eigenvalue pair off by {a:e}, {b:e}");
        let j0 = orbit.jacobi;
        for s in &tr.states {
            let j = jacobi_constant(s, p).unwrap();
            assert!(((j - j0) / j0).abs() < 1e-10);
        }
        // Twice-applied map returns to the start.
        let p0 = project_to_section(&orbit.initial).unwrap();
        let p1 = poincare_map(&p0, p, &popts).unwrap();
        let p2 = poincare_map(&p1, p, &popts).unwrap();
        assert!((p2.coords() - p0.coords()).norm() < 1e-7);
        assert!((p2.t_cross - orbit.period).abs() < 1e-3);
    }

    #[test]
    fn corrector_converges_from_initial_orbit() {
        let orbit = correct_periodic_orbit(&initial_state(), params(), &CorrectorOptions::default())
            .unwrap();
        check_orbit(&orbit);
    }

    #[test]
    fn corrector_converges_from_target_orbit() {
        let orbit =
            correct_periodic_orbit(&target_state(), params(), &CorrectorOptions::default()).unwrap();
        check_orbit(&orbit);
    }

    #[test]
    fn corrector_recovers_from_perturbed_guess() {
        let mut g = initial_state();
        g.r.x += 1e-4;
        let orbit = correct_periodic_orbit(&g, params(), &CorrectorOptions::default()).unwrap();
        check_orbit(&orbit);
    }

    #[test]
    fn catalog_round_trip_with_unit_tag() {
        let e = CatalogEntry {
            name: "x_i".into(),
            unit: LengthUnit::M,
            x: 1497.3,
            y: 0.0,
            z: 6.1,
            vx: 0.0,
            vy: -0.9,
            vz: 0.0,
            period: 1.0e4,
            jacobi: -1.0e-8,
        };
        let mut buf = Vec::new();
        write_catalog(std::slice::from_ref(&e), &mut buf).unwrap();
        let back = read_catalog(buf.as_slice()).unwrap();
        assert_eq!(back, vec![e]);
        let s = back[0].state();
        assert!((s.r.x - 1.4973).abs() < 1e-12 && (s.v.y + 0.0009).abs() < 1e-15);
    }
}
