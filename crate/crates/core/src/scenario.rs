//! Castalia transfer scenario defaults.

use std::sync::Arc;

use crate::dynamics::{spin_rate_from_period_hours, AsteroidParams, State};
use crate::gravity::{density_from_g_cm3, GravityModel};
use crate::shape::primitives::{castalia_surrogate, GridResolution};
use crate::shape::ShapeModel;

/// Bulk density, g/cm^3.
pub const DENSITY_G_CM3: f64 = 2.1;
/// Rotation period, hours.
pub const ROTATION_PERIOD_H: f64 = 4.07;
/// Control acceleration bound, mm/s^2.
pub const CONTROL_BOUND_MM_S2: f64 = 0.1;
/// Control acceleration bound, km/s^2.
pub const CONTROL_BOUND: f64 = CONTROL_BOUND_MM_S2 * 1e-6;

/// Initial periodic orbit, (x, y, z, vx, vy, vz) in km and km/s.
pub const X_INITIAL: [f64; 6] = [1.4973, 0.0, 0.0061, 0.0, -0.0009, 0.0];
/// Target periodic orbit, (x, y, z, vx, vy, vz) in km and km/s.
pub const X_TARGET: [f64; 6] = [6.1175, 0.0, 0.0001, 0.0, -0.0025, 0.0];

pub fn initial_state() -> State {
    State::from_slice(&X_INITIAL, 0.0)
}

pub fn target_state() -> State {
    State::from_slice(&X_TARGET, 0.0)
}

pub fn spin_rate() -> f64 {
    spin_rate_from_period_hours(ROTATION_PERIOD_H)
}

/// Parameters for the bilobed surrogate body at the scenario density and spin.
pub fn surrogate_params(res: GridResolution) -> AsteroidParams {
    let shape = ShapeModel::new(castalia_surrogate(res)).expect("surrogate mesh is valid");
    let gravity = GravityModel::new(shape, density_from_g_cm3(DENSITY_G_CM3))
        .expect("surrogate geometry is non-degenerate");
    AsteroidParams::new(Arc::new(gravity), spin_rate()).expect("positive spin rate")
}
