//! Small-body astrodynamics: polyhedron gravity, body-fixed propagation,
//! Poincaré-section periodic orbits and reachability-based low-thrust transfers.

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod shape;
pub mod gravity;
pub mod ode;
pub mod dynamics;
pub mod poincare;
pub mod reachability;
pub mod scenario;

#[cfg(test)]
pub(crate) mod testing {
    use std::sync::OnceLock;

    use crate::dynamics::AsteroidParams;
    use crate::scenario::surrogate_params;
    use crate::shape::primitives::GridResolution;

    /// Reduced-resolution surrogate body shared across unit tests.
    pub fn params() -> &'static AsteroidParams {
        static PARAMS: OnceLock<AsteroidParams> = OnceLock::new();
        PARAMS.get_or_init(|| surrogate_params(GridResolution::REDUCED))
    }
}
