use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use super::{edge_adjacency, TriMesh};

/// One violated shape-model invariant, with the offending element indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    VertexIndexOutOfRange { face: usize, index: usize },
    RepeatedVertex { face: usize },
    /// An undirected edge that is not shared by exactly two faces.
    EdgeAdjacency { edge: [usize; 2], faces: Vec<usize> },
    /// Faces whose winding disagrees with the majority of their neighbours.
    InconsistentWinding { faces: Vec<usize> },
    EulerCharacteristic { value: i64 },
    NonPositiveVolume { volume: f64 },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::VertexIndexOutOfRange { face, index } => {
                write!(f, "face {face} references missing vertex {index}")
            }
            Issue::RepeatedVertex { face } => write!(f, "face {face} repeats a vertex"),
            Issue::EdgeAdjacency { edge, faces } => write!(
                f,
                "edge ({}, {}) has {} adjacent faces {:?}",
                edge[0],
                edge[1],
                faces.len(),
                faces
            ),
            Issue::InconsistentWinding { faces } => {
                write!(f, "faces {faces:?} are wound against their neighbours")
            }
            Issue::EulerCharacteristic { value } => {
                write!(f, "Euler characteristic V - E + F = {value}, expected 2")
            }
            Issue::NonPositiveVolume { volume } => {
                write!(f, "signed volume {volume:e} km^3 is not positive")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        self.issues.iter().filter_map(|i| match i {
            Issue::EdgeAdjacency { edge, faces } if faces.len() == 1 => Some(*edge),
            _ => None,
        })
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "no issues");
        }
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Checks every shape-model invariant and reports all violations.
pub fn validate_shape(mesh: &TriMesh) -> ValidationReport {
    let mut issues = Vec::new();
    let nv = mesh.vertices.len();

    let mut indices_ok = true;
    for (fi, face) in mesh.faces.iter().enumerate() {
        for &i in face {
            if i >= nv {
                issues.push(Issue::VertexIndexOutOfRange { face: fi, index: i });
                indices_ok = false;
            }
        }
        if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
            issues.push(Issue::RepeatedVertex { face: fi });
        }
    }

    let (table, _) = edge_adjacency(&mesh.faces);
    let mut manifold = true;
    for (edge, adj) in &table {
        if adj.len() != 2 {
            manifold = false;
            issues.push(Issue::EdgeAdjacency {
                edge: *edge,
                faces: adj.iter().map(|a| a.0).collect(),
            });
        }
    }

    let flipped = winding_outliers(mesh.faces.len(), &table);
    if !flipped.is_empty() {
        issues.push(Issue::InconsistentWinding { faces: flipped });
    }

    let chi = nv as i64 - table.len() as i64 + mesh.faces.len() as i64;
    if chi != 2 {
        issues.push(Issue::EulerCharacteristic { value: chi });
    }

    if indices_ok && manifold {
        let volume = mesh.signed_volume();
        if volume <= 0.0 || !volume.is_finite() {
            issues.push(Issue::NonPositiveVolume { volume });
        }
    }

    ValidationReport { issues }
}

/// Propagates orientation across shared edges and returns the minority class
/// of each connected component (ties: the class not containing the seed face).
fn winding_outliers(nfaces: usize, table: &[([usize; 2], Vec<(usize, bool)>)]) -> Vec<usize> {
    // neighbours[f] = (g, same) where `same` means g must share f's parity.
    let mut neighbours: Vec<Vec<(usize, bool)>> = vec![Vec::new(); nfaces];
    for (_, adj) in table {
        if let [(fa, da), (fb, db)] = adj.as_slice() {
            // Consistent faces traverse a shared edge in opposite directions.
            let consistent = da != db;
            neighbours[*fa].push((*fb, consistent));
            neighbours[*fb].push((*fa, consistent));
        }
    }

    let mut parity: Vec<Option<bool>> = vec![None; nfaces];
    let mut out = Vec::new();
    for seed in 0..nfaces {
        if parity[seed].is_some() {
            continue;
        }
        parity[seed] = Some(false);
        let mut component = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(f) = queue.pop_front() {
            let pf = parity[f].unwrap();
            for &(g, consistent) in &neighbours[f] {
                if parity[g].is_none() {
                    parity[g] = Some(if consistent { pf } else { !pf });
                    component.push(g);
                    queue.push_back(g);
                }
            }
        }
        let odd: Vec<usize> = component
            .iter()
            .copied()
            .filter(|&f| parity[f] == Some(true))
            .collect();
        let minority = if 2 * odd.len() <= component.len() {
            odd
        } else {
            component
                .iter()
                .copied()
                .filter(|&f| parity[f] == Some(false))
                .collect()
        };
        out.extend(minority);
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::primitives::{cube, tetrahedron};

    #[test]
    fn valid_bodies_produce_empty_reports() {
        assert!(validate_shape(&tetrahedron()).is_empty());
        assert!(validate_shape(&cube()).is_empty());
    }

    #[test]
    fn flipped_tetrahedron_face_is_cited() {
        for target in 0..4 {
            let mut mesh = tetrahedron();
            mesh.faces[target].swap(1, 2);
            let report = validate_shape(&mesh);
            assert!(
                report
                    .issues
                    .contains(&Issue::InconsistentWinding { faces: vec![target] }),
                "{report}"
            );
        }
    }

    #[test]
    fn cube_missing_face_cites_three_boundary_edges() {
        let mut mesh = cube();
        mesh.faces.remove(5);
        let report = validate_shape(&mesh);
        assert_eq!(report.boundary_edges().count(), 3);
    }

    #[test]
    fn inverted_mesh_has_negative_volume() {
        let mut mesh = cube();
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
        let report = validate_shape(&mesh);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, Issue::NonPositiveVolume { .. })));
    }

    #[test]
    fn out_of_range_and_repeated_indices() {
        let mut mesh = tetrahedron();
        mesh.faces[0] = [0, 0, 9];
        let report = validate_shape(&mesh);
        assert!(report
            .issues
            .contains(&Issue::VertexIndexOutOfRange { face: 0, index: 9 }));
        assert!(report.issues.contains(&Issue::RepeatedVertex { face: 0 }));
    }
}
