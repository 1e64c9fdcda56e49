//! Triangulated shape models: loading, topology, validation and the
//! position-independent geometry used by the polyhedron gravity field.

mod cache;
mod geometry;
mod io;
pub mod primitives;
mod validate;

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

pub use cache::{read_cache, shape_digest, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use geometry::{precompute_geometry, GeometryCache, DEGENERATE_AREA};
pub use io::{load_shape, parse_obj, read_mesh, parse_tables, to_obj, LengthUnit, ShapeFormat, ShapeSource};
pub use validate::{validate_shape, Issue, ValidationReport};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face at line {line} has {count} vertices; only triangles are supported")]
    NonTriangular { line: usize, count: usize },
    #[error("invalid shape model: {0}")]
    Invalid(ValidationReport),
    #[error("degenerate face {face}: area {area:e} km^2")]
    DegenerateFace { face: usize, area: f64 },
    #[error("geometry cache: {0}")]
    Cache(String),
}

/// A face/vertex list that has not been checked for closure or orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        Self { vertices, faces }
    }

    /// Divergence-theorem volume; positive for outward (counterclockwise) winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .filter(|f| f.iter().all(|&i| i < self.vertices.len()))
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn translate(&mut self, offset: &Vector3<f64>) {
        for v in &mut self.vertices {
            *v += offset;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.vertices {
            *v *= factor;
        }
    }
}

/// One undirected edge of a closed triangulated surface.
///
/// `vertices` is sorted ascending. For each adjacent face, `forward[k]` records
/// whether face `faces[k]` traverses the edge as `vertices[0] -> vertices[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub faces: [usize; 2],
    pub forward: [bool; 2],
}

impl Edge {
    /// Start vertex of the edge as traversed by adjacent face `k`.
    pub fn tail(&self, k: usize) -> usize {
        if self.forward[k] {
            self.vertices[0]
        } else {
            self.vertices[1]
        }
    }

    /// End vertex of the edge as traversed by adjacent face `k`.
    pub fn head(&self, k: usize) -> usize {
        if self.forward[k] {
            self.vertices[1]
        } else {
            self.vertices[0]
        }
    }
}

/// A validated closed, consistently oriented, genus-0 triangulated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    edges: Vec<Edge>,
}

impl ShapeModel {
    /// Validates `mesh` and builds its edge topology.
    pub fn new(mesh: TriMesh) -> Result<Self, ShapeError> {
        let report = validate_shape(&mesh);
        if !report.is_empty() {
            return Err(ShapeError::Invalid(report));
        }
        let edges = build_edges(&mesh.faces).expect("validated mesh has two faces per edge");
        Ok(Self {
            vertices: mesh.vertices,
            faces: mesh.faces,
            edges,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    pub fn signed_volume(&self) -> f64 {
        self.to_mesh().signed_volume()
    }

    pub fn to_mesh(&self) -> TriMesh {
        TriMesh::new(self.vertices.clone(), self.faces.clone())
    }

    /// Largest vertex distance from the origin (km).
    pub fn circumscribing_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Groups directed face edges by their sorted vertex pair, in first-seen order.
/// Each adjacency entry is (face index, traverses low -> high vertex).
pub(crate) fn edge_adjacency(
    faces: &[[usize; 3]],
) -> (Vec<([usize; 2], Vec<(usize, bool)>)>, HashMap<[usize; 2], usize>) {
    let mut index: HashMap<[usize; 2], usize> = HashMap::new();
    let mut table: Vec<([usize; 2], Vec<(usize, bool)>)> = Vec::new();
    for (fi, face) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            let key = if a < b { [a, b] } else { [b, a] };
            let slot = *index.entry(key).or_insert_with(|| {
                table.push((key, Vec::with_capacity(2)));
                table.len() - 1
            });
            table[slot].1.push((fi, a < b));
        }
    }
    (table, index)
}

fn build_edges(faces: &[[usize; 3]]) -> Option<Vec<Edge>> {
    let (table, _) = edge_adjacency(faces);
    table
        .into_iter()
        .map(|(vertices, adj)| match adj.as_slice() {
            [(fa, da), (fb, db)] => Some(Edge {
                vertices,
                faces: [*fa, *fb],
                forward: [*da, *db],
            }),
            _ => None,
        })
        .collect()
}
