//! Binary geometry cache.
//!
//! Layout (little endian): 8-byte magic, u32 version, 32-byte SHA-256 of the
//! shape content, u64 face count, u64 edge count, then per face
//! `normal[3] area dyad[9]`, per edge `normal_a[3] normal_b[3] dyad[9] length`,
//! and finally `radius volume centroid[3]`, all as f64.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use sha2::{Digest, Sha256};

use super::{GeometryCache, ShapeError, ShapeModel};

pub const CACHE_MAGIC: &[u8; 8] = b"SBRGEOM\0";
pub const CACHE_VERSION: u32 = 1;

/// SHA-256 over vertex coordinates and face indices, independent of the file
/// format the shape was read from.
pub fn shape_digest(shape: &ShapeModel) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((shape.vertices().len() as u64).to_le_bytes());
    for v in shape.vertices() {
        for c in v.iter() {
            h.update(c.to_le_bytes());
        }
    }
    h.update((shape.faces().len() as u64).to_le_bytes());
    for f in shape.faces() {
        for i in f {
            h.update((*i as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn write_cache(
    path: &Path,
    shape: &ShapeModel,
    cache: &GeometryCache,
) -> Result<(), ShapeError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&shape_digest(shape));
    buf.extend_from_slice(&(cache.face_normals.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(cache.edge_dyads.len() as u64).to_le_bytes());
    let mut put = |xs: &[f64]| {
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    };
    for f in 0..cache.face_normals.len() {
        put(cache.face_normals[f].as_slice());
        put(&[cache.face_areas[f]]);
        put(cache.face_dyads[f].as_slice());
    }
    for e in 0..cache.edge_dyads.len() {
        put(cache.edge_normals[e][0].as_slice());
        put(cache.edge_normals[e][1].as_slice());
        put(cache.edge_dyads[e].as_slice());
        put(&[cache.edge_lengths[e]]);
    }
    put(&[cache.circumscribing_radius, cache.volume]);
    put(cache.centroid.as_slice());
    std::fs::write(path, buf).map_err(|source| ShapeError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ShapeError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(ShapeError::Cache("truncated file".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, ShapeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ShapeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, ShapeError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn mat3(&mut self) -> Result<Matrix3<f64>, ShapeError> {
        let mut m = [0.0; 9];
        for x in &mut m {
            *x = self.f64()?;
        }
        Ok(Matrix3::from_column_slice(&m))
    }
}

/// Reads a cache file, rejecting it unless it was written for `shape`.
pub fn read_cache(path: &Path, shape: &ShapeModel) -> Result<GeometryCache, ShapeError> {
    let bytes = std::fs::read(path).map_err(|source| ShapeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != CACHE_MAGIC {
        return Err(ShapeError::Cache("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(ShapeError::Cache(format!("unsupported version {version}")));
    }
    if r.take(32)? != shape_digest(shape) {
        return Err(ShapeError::Cache("content hash does not match shape".into()));
    }
    let nf = r.u64()? as usize;
    let ne = r.u64()? as usize;
    if nf != shape.faces().len() || ne != shape.edges().len() {
        return Err(ShapeError::Cache("element counts do not match shape".into()));
    }
    let mut cache = GeometryCache {
        face_normals: Vec::with_capacity(nf),
        face_areas: Vec::with_capacity(nf),
        edge_normals: Vec::with_capacity(ne),
        face_dyads: Vec::with_capacity(nf),
        edge_dyads: Vec::with_capacity(ne),
        edge_lengths: Vec::with_capacity(ne),
        circumscribing_radius: 0.0,
        volume: 0.0,
        centroid: Vector3::zeros(),
    };
    for _ in 0..nf {
        cache.face_normals.push(r.vec3()?);
        cache.face_areas.push(r.f64()?);
        cache.face_dyads.push(r.mat3()?);
    }
    for _ in 0..ne {
        cache.edge_normals.push([r.vec3()?, r.vec3()?]);
        cache.edge_dyads.push(r.mat3()?);
        cache.edge_lengths.push(r.f64()?);
    }
    cache.circumscribing_radius = r.f64()?;
    cache.volume = r.f64()?;
    cache.centroid = r.vec3()?;
    if r.pos != bytes.len() {
        return Err(ShapeError::Cache("trailing bytes".into()));
    }
    Ok(cache)
}
