//! Closed test bodies and a bilobed asteroid surrogate.
//!
//! The surrogate is a star-shaped union of two ellipsoids meshed on a
//! latitude/longitude grid, recentred on its centroid and scaled to a chosen
//! volume. It is symmetric about the xz and xy planes, so the coordinate axes
//! are principal axes and the z axis carries the largest moment of inertia.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::TriMesh;

/// Regular tetrahedron centred at the origin with circumradius sqrt(3) km.
pub fn tetrahedron() -> TriMesh {
    let vertices = vec![
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, -1.0, -1.0),
        Vector3::new(-1.0, 1.0, -1.0),
        Vector3::new(-1.0, -1.0, 1.0),
    ];
    let faces = vec![[0, 1, 2], [1, 0, 3], [2, 1, 3], [0, 2, 3]];
    TriMesh::new(vertices, faces)
}

/// Unit cube `[-1/2, 1/2]^3` (km) split into 12 outward-wound triangles.
pub fn cube() -> TriMesh {
    let vertices = (0..8)
        .map(|i| {
            let c = |bit: usize| if i & bit == 0 { -0.5 } else { 0.5 };
            Vector3::new(c(1), c(2), c(4))
        })
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriMesh::new(vertices, faces)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: Vector3<f64>,
    pub semi_axes: Vector3<f64>,
}

impl Ellipsoid {
    /// Distance along unit direction `dir` from the origin to the far surface
    /// crossing. The origin must lie inside the ellipsoid.
    fn ray_exit(&self, dir: &Vector3<f64>) -> f64 {
        let p = dir.component_div(&self.semi_axes);
        let q = self.center.component_div(&self.semi_axes);
        let pp = p.norm_squared();
        let pq = p.dot(&q);
        let disc = pq * pq - pp * (q.norm_squared() - 1.0);
        (pq + disc.sqrt()) / pp
    }
}

/// Latitude/longitude mesh resolution: `rings * segments * 2` faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridResolution {
    pub rings: usize,
    pub segments: usize,
}

impl GridResolution {
    /// 2048 vertices, 4092 faces.
    pub const FULL: Self = Self {
        rings: 31,
        segments: 66,
    };
    /// 514 vertices, 1024 faces.
    pub const REDUCED: Self = Self {
        rings: 16,
        segments: 32,
    };

    pub fn face_count(&self) -> usize {
        2 * self.rings * self.segments
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilobedBody {
    pub lobes: [Ellipsoid; 2],
    /// Volume after rescaling (km^3).
    pub volume: f64,
}

impl BilobedBody {
    /// Contact-binary proportions of a ~1.8 km long near-Earth asteroid. The
    /// volume is chosen so that, at 2.1 g/cm^3, GM is about 9.3e-8 km^3/s^2.
    pub fn castalia_like() -> Self {
        Self {
            lobes: [
                Ellipsoid {
                    center: Vector3::new(0.42, 0.0, 0.0),
                    semi_axes: Vector3::new(0.55, 0.47, 0.40),
                },
                Ellipsoid {
                    center: Vector3::new(-0.40, 0.0, 0.0),
                    semi_axes: Vector3::new(0.50, 0.43, 0.37),
                },
            ],
            volume: 0.664,
        }
    }

    fn radius(&self, dir: &Vector3<f64>) -> f64 {
        self.lobes
            .iter()
            .map(|l| l.ray_exit(dir))
            .fold(0.0, f64::max)
    }

    pub fn mesh(&self, res: GridResolution) -> TriMesh {
        let mut mesh = star_mesh(res, |d| self.radius(d));
        let centroid = centroid(&mesh);
        mesh.translate(&-centroid);
        let v = mesh.signed_volume();
        mesh.scale((self.volume / v).cbrt());
        mesh
    }
}

/// Castalia-sized surrogate at the given resolution.
pub fn castalia_surrogate(res: GridResolution) -> TriMesh {
    BilobedBody::castalia_like().mesh(res)
}

/// Meshes the star-shaped surface `r = radius(direction)` with poles on z.
pub fn star_mesh(res: GridResolution, radius: impl Fn(&Vector3<f64>) -> f64) -> TriMesh {
    let GridResolution { rings, segments } = res;
    let mut vertices = Vec::with_capacity(rings * segments + 2);
    let mut push = |dir: Vector3<f64>| vertices.push(dir * radius(&dir));
    push(Vector3::z());
    for k in 0..rings {
        let theta = PI * (k + 1) as f64 / (rings + 1) as f64;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            push(Vector3::new(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ));
        }
    }
    push(-Vector3::z());

    let ring = |k: usize, j: usize| 1 + k * segments + j % segments;
    let south = rings * segments + 1;
    let mut faces = Vec::with_capacity(res.face_count());
    for j in 0..segments {
        faces.push([0, ring(0, j), ring(0, j + 1)]);
    }
    for k in 0..rings - 1 {
        for j in 0..segments {
            let (a, b) = (ring(k, j), ring(k, j + 1));
            let (c, d) = (ring(k + 1, j + 1), ring(k + 1, j));
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    for j in 0..segments {
        faces.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    TriMesh::new(vertices, faces)
}

/// Volume centroid of a closed mesh.
pub fn centroid(mesh: &TriMesh) -> Vector3<f64> {
    let mut moment = Vector3::zeros();
    let mut volume = 0.0;
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| mesh.vertices[i]);
        let v = a.dot(&b.cross(&c)) / 6.0;
        volume += v;
        moment += (a + b + c) * (v / 4.0);
    }
    moment / volume
}
