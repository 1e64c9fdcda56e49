//! Exact gravity field of a constant-density polyhedron.
//!
//! Units are km, s, kg. The potential is positive (U -> GM/r far away) and the
//! attraction is +grad U.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::shape::{precompute_geometry, GeometryCache, ShapeError, ShapeModel};

/// Gravitational constant in km^3 kg^-1 s^-2.
pub const G: f64 = 6.67430e-20;

/// Converts g/cm^3 to kg/km^3.
pub fn density_from_g_cm3(rho: f64) -> f64 {
    rho * 1e12
}

#[derive(Debug, Error)]
pub enum GravityError {
    #[error("field point lies on edge {edge} of the shape model")]
    EdgeSingularity { edge: usize },
    #[error("density must be positive and finite, got {0} kg/km^3")]
    InvalidDensity(f64),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Shape, precomputed geometry and density. Immutable once built.
#[derive(Debug, Clone)]
pub struct GravityModel {
    shape: ShapeModel,
    cache: GeometryCache,
    density: f64,
    g_sigma: f64,
}

impl GravityModel {
    /// `density` in kg/km^3.
    pub fn new(shape: ShapeModel, density: f64) -> Result<Self, GravityError> {
        let cache = precompute_geometry(&shape)?;
        Self::with_geometry(shape, cache, density)
    }

    /// Builds a model from an already computed (e.g. cached) geometry.
    pub fn with_geometry(
        shape: ShapeModel,
        cache: GeometryCache,
        density: f64,
    ) -> Result<Self, GravityError> {
        if !(density > 0.0 && density.is_finite()) {
            return Err(GravityError::InvalidDensity(density));
        }
        Ok(Self {
            shape,
            cache,
            density,
            g_sigma: G * density,
        })
    }

    pub fn shape(&self) -> &ShapeModel {
        &self.shape
    }

    pub fn geometry(&self) -> &GeometryCache {
        &self.cache
    }

    /// kg/km^3.
    pub fn density(&self) -> f64 {
        self.density
    }

    /// G times density, s^-2.
    pub fn g_sigma(&self) -> f64 {
        self.g_sigma
    }

    pub fn mass(&self) -> f64 {
        self.density * self.cache.volume
    }

    /// km^3/s^2.
    pub fn gm(&self) -> f64 {
        self.g_sigma * self.cache.volume
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEvaluation {
    /// km^2/s^2.
    pub potential: f64,
    /// Attraction, km/s^2.
    pub gradient: Vector3<f64>,
    /// Gravity gradient matrix, s^-2.
    pub hessian: Matrix3<f64>,
    /// s^-2.
    pub laplacian: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementFactors {
    /// L_e, in edge order.
    pub edge: Vec<f64>,
    /// Signed solid angle of each face seen from the field point, in face order.
    pub face: Vec<f64>,
}

/// ln((ri + rj + e) / (ri + rj - e)), or `None` when the point is on the edge.
pub fn edge_factor(ri: f64, rj: f64, e: f64) -> Option<f64> {
    let a = ri + rj;
    if a - e < 1e-12 * e {
        return None;
    }
    Some(((a + e) / (a - e)).ln())
}

/// Signed solid angle subtended by the triangle with vertex offsets `a, b, c`
/// (vertex minus field point). Positive when the field point is behind the face.
pub fn face_factor(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let (na, nb, nc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(c));
    let den = na * nb * nc + na * b.dot(c) + nb * c.dot(a) + nc * a.dot(b);
    2.0 * num.atan2(den)
}

fn offsets(r: &Vector3<f64>, model: &GravityModel) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let d: Vec<Vector3<f64>> = model.shape.vertices().iter().map(|v| v - r).collect();
    let n = d.iter().map(|x| x.norm()).collect();
    (d, n)
}

fn edge_factors(n: &[f64], model: &GravityModel) -> Result<Vec<f64>, GravityError> {
    model
        .shape
        .edges()
        .iter()
        .zip(&model.cache.edge_lengths)
        .enumerate()
        .map(|(k, (e, &len))| {
            let [i, j] = e.vertices;
            edge_factor(n[i], n[j], len).ok_or(GravityError::EdgeSingularity { edge: k })
        })
        .collect()
}

fn face_factors(d: &[Vector3<f64>], n: &[f64], model: &GravityModel) -> Vec<f64> {
    model
        .shape
        .faces()
        .iter()
        .map(|&[i, j, k]| {
            let (a, b, c) = (&d[i], &d[j], &d[k]);
            let num = a.dot(&b.cross(c));
            let den = n[i] * n[j] * n[k] + n[i] * b.dot(c) + n[j] * c.dot(a) + n[k] * a.dot(b);
            2.0 * num.atan2(den)
        })
        .collect()
}

pub fn per_element_factors(
    r: &Vector3<f64>,
    model: &GravityModel,
) -> Result<ElementFactors, GravityError> {
    let (d, n) = offsets(r, model);
    Ok(ElementFactors {
        edge: edge_factors(&n, model)?,
        face: face_factors(&d, &n, model),
    })
}

/// Potential, attraction, gradient matrix and Laplacian in one pass.
pub fn evaluate_field(r: &Vector3<f64>, model: &GravityModel) -> Result<FieldEvaluation, GravityError> {
    let (d, n) = offsets(r, model);
    let le = edge_factors(&n, model)?;
    let wf = face_factors(&d, &n, model);
    let cache = &model.cache;

    let mut u = 0.0;
    let mut grad = Vector3::zeros();
    let mut hess = Matrix3::zeros();
    for ((e, dyad), &l) in model.shape.edges().iter().zip(&cache.edge_dyads).zip(&le) {
        let re = d[e.vertices[0]];
        let er = dyad * re;
        u += re.dot(&er) * l;
        grad -= er * l;
        hess += dyad * l;
    }
    let mut omega = 0.0;
    for ((f, dyad), &w) in model.shape.faces().iter().zip(&cache.face_dyads).zip(&wf) {
        let rf = d[f[0]];
        let fr = dyad * rf;
        u -= rf.dot(&fr) * w;
        grad += fr * w;
        hess -= dyad * w;
        omega += w;
    }
    let gs = model.g_sigma;
    Ok(FieldEvaluation {
        potential: 0.5 * gs * u,
        gradient: gs * grad,
        hessian: gs * hess,
        laplacian: -gs * omega,
    })
}

/// Sum of face solid angles: 0 outside the body, 4 pi inside.
pub fn solid_angle_sum(r: &Vector3<f64>, model: &GravityModel) -> f64 {
    let (d, n) = offsets(r, model);
    face_factors(&d, &n, model).iter().sum()
}

pub fn is_interior(r: &Vector3<f64>, model: &GravityModel) -> bool {
    solid_angle_sum(r, model).abs() > 2.0 * PI
}

/// Field plus the derivative of `hessian * w` with respect to the field point,
/// i.e. the third potential derivative contracted with `w`.
pub fn evaluate_field_with_hessian_derivative(
    r: &Vector3<f64>,
    w: &Vector3<f64>,
    model: &GravityModel,
) -> Result<(FieldEvaluation, Matrix3<f64>), GravityError> {
    let field = evaluate_field(r, model)?;
    let (d, n) = offsets(r, model);
    let cache = &model.cache;
    let mut t = Matrix3::zeros();

    for ((e, dyad), &len) in model
        .shape
        .edges()
        .iter()
        .zip(&cache.edge_dyads)
        .zip(&cache.edge_lengths)
    {
        let [i, j] = e.vertices;
        let a = n[i] + n[j];
        let grad_l = (d[i] / n[i] + d[j] / n[j]) * (2.0 * len / (a * a - len * len));
        t += (dyad * w) * grad_l.transpose();
    }

    for (f, dyad) in model.shape.faces().iter().zip(&cache.face_dyads) {
        let (a, b, c) = (d[f[0]], d[f[1]], d[f[2]]);
        let (na, nb, nc) = (n[f[0]], n[f[1]], n[f[2]]);
        let (ah, bh, ch) = (a / na, b / nb, c / nc);
        let num = a.dot(&b.cross(&c));
        let den = na * nb * nc + na * b.dot(&c) + nb * c.dot(&a) + nc * a.dot(&b);
        let grad_num = -(b.cross(&c) + c.cross(&a) + a.cross(&b));
        let grad_den = -(ah * (nb * nc) + bh * (na * nc) + ch * (na * nb))
            - (ah * b.dot(&c) + (b + c) * na)
            - (bh * c.dot(&a) + (c + a) * nb)
            - (ch * a.dot(&b) + (a + b) * nc);
        let grad_w = (grad_num * den - grad_den * num) * (2.0 / (num * num + den * den));
        t -= (dyad * w) * grad_w.transpose();
    }
    Ok((field, model.g_sigma * t))
}
