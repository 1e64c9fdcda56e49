use nalgebra::{Matrix3, Vector3};

use super::{primitives, ShapeError, ShapeModel};

/// Faces with area below this (km^2) are rejected.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Position-independent quantities of a shape model: unit normals, face and
/// edge dyads, edge lengths and bulk properties. Built once per shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryCache {
    pub face_normals: Vec<Vector3<f64>>,
    pub face_areas: Vec<f64>,
    /// Outward in-plane edge normal for each adjacent face of each edge,
    /// in the same order as `Edge::faces`.
    pub edge_normals: Vec<[Vector3<f64>; 2]>,
    pub face_dyads: Vec<Matrix3<f64>>,
    pub edge_dyads: Vec<Matrix3<f64>>,
    pub edge_lengths: Vec<f64>,
    pub circumscribing_radius: f64,
    pub volume: f64,
    pub centroid: Vector3<f64>,
}

pub fn precompute_geometry(shape: &ShapeModel) -> Result<GeometryCache, ShapeError> {
    let v = shape.vertices();
    let mut face_normals = Vec::with_capacity(shape.faces().len());
    let mut face_areas = Vec::with_capacity(shape.faces().len());
    for (fi, f) in shape.faces().iter().enumerate() {
        let n = (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[1]]));
        let area = 0.5 * n.norm();
        if !(area >= DEGENERATE_AREA) {
            return Err(ShapeError::DegenerateFace { face: fi, area });
        }
        face_normals.push(n / (2.0 * area));
        face_areas.push(area);
    }

    let face_dyads = face_normals.iter().map(|n| n * n.transpose()).collect();

    let mut edge_normals = Vec::with_capacity(shape.edges().len());
    let mut edge_dyads = Vec::with_capacity(shape.edges().len());
    let mut edge_lengths = Vec::with_capacity(shape.edges().len());
    for e in shape.edges() {
        let mut normals = [Vector3::zeros(); 2];
        let mut dyad = Matrix3::zeros();
        for k in 0..2 {
            let nf = face_normals[e.faces[k]];
            let dir = v[e.head(k)] - v[e.tail(k)];
            let ne = dir.cross(&nf).normalize();
            dyad += nf * ne.transpose();
            normals[k] = ne;
        }
        edge_normals.push(normals);
        edge_dyads.push(dyad);
        edge_lengths.push((v[e.vertices[1]] - v[e.vertices[0]]).norm());
    }

    let mesh = shape.to_mesh();
    Ok(GeometryCache {
        face_normals,
        face_areas,
        edge_normals,
        face_dyads,
        edge_dyads,
        edge_lengths,
        circumscribing_radius: shape.circumscribing_radius(),
        volume: mesh.signed_volume(),
        centroid: primitives::centroid(&mesh),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::primitives::{castalia_surrogate, cube, tetrahedron, GridResolution};
    use nalgebra::Rotation3;

    #[test]
    fn single_face_normal_and_dyad() {
        // Open single triangle: precompute only needs the face pass here.
        let v = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let n = (v[1] - v[0]).cross(&(v[2] - v[1])).normalize();
        assert_eq!(n, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(n * n.transpose(), Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 1.0)));
    }

    #[test]
    fn cube_dyads_are_symmetric_and_normalised() {
        let shape = ShapeModel::new(cube()).unwrap();
        let g = precompute_geometry(&shape).unwrap();
        for e in &g.edge_dyads {
            assert!((e - e.transpose()).norm() < 1e-14);
        }
        for f in &g.face_dyads {
            assert!((f.trace() - 1.0).abs() < 1e-15);
            assert!((f * f - f).norm() < 1e-15);
        }
        assert!((g.volume - 1.0).abs() < 1e-15);
        assert!(g.centroid.norm() < 1e-15);
    }

    #[test]
    fn edge_normals_are_orthogonal_on_rotated_tetrahedron() {
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.4);
        let mut mesh = tetrahedron();
        for v in &mut mesh.vertices {
            *v = rot * *v;
        }
        let shape = ShapeModel::new(mesh).unwrap();
        let g = precompute_geometry(&shape).unwrap();
        for (e, normals) in shape.edges().iter().zip(&g.edge_normals) {
            let dir = (shape.vertices()[e.vertices[1]] - shape.vertices()[e.vertices[0]]).normalize();
            for (n, f) in normals.iter().zip(e.faces) {
                assert!(n.dot(&dir).abs() < 1e-14);
                assert!(n.dot(&g.face_normals[f]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn area_weighted_normals_sum_to_zero() {
        for mesh in [cube(), tetrahedron(), castalia_surrogate(GridResolution::REDUCED)] {
            let shape = ShapeModel::new(mesh).unwrap();
            let g = precompute_geometry(&shape).unwrap();
            let total: Vector3<f64> = g
                .face_normals
                .iter()
                .zip(&g.face_areas)
                .map(|(n, a)| n * *a)
                .sum();
            let scale: f64 = g.face_areas.iter().sum();
            assert!(total.norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn precompute_is_deterministic() {
        let shape = ShapeModel::new(castalia_surrogate(GridResolution::REDUCED)).unwrap();
        assert_eq!(
            precompute_geometry(&shape).unwrap(),
            precompute_geometry(&shape).unwrap()
        );
    }

    #[test]
    fn rejects_zero_area_face() {
        let shape = ShapeModel::new(tetrahedron()).unwrap();
        let mut vertices = shape.vertices().to_vec();
        // Collapse face 0 by putting its third vertex on its first edge.
        vertices[2] = 0.5 * (vertices[0] + vertices[1]);
        let collapsed = ShapeModel { vertices, ..shape };
        assert!(matches!(
            precompute_geometry(&collapsed),
            Err(ShapeError::DegenerateFace { face: 0, .. })
        ));
    }
}
