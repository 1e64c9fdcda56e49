use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{ShapeError, ShapeModel, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Km,
    M,
}

impl LengthUnit {
    pub fn to_km(self) -> f64 {
        match self {
            LengthUnit::Km => 1.0,
            LengthUnit::M => 1e-3,
        }
    }
}

impl FromStr for LengthUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "km" => Ok(LengthUnit::Km),
            "m" => Ok(LengthUnit::M),
            other => Err(format!("unknown length unit '{other}' (expected km or m)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum ShapeFormat {
    /// Wavefront OBJ with `v` and `f` records.
    Obj { path: PathBuf },
    /// Whitespace-delimited vertex table (x y z) and 1-based face table (i j k).
    Tables { vertices: PathBuf, faces: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSource {
    #[serde(flatten)]
    pub format: ShapeFormat,
    #[serde(default)]
    pub unit: LengthUnit,
}

impl ShapeSource {
    pub fn obj(path: impl Into<PathBuf>) -> Self {
        Self {
            format: ShapeFormat::Obj { path: path.into() },
            unit: LengthUnit::Km,
        }
    }

    /// Raw bytes of every file backing the source, in a fixed order.
    pub fn read_bytes(&self) -> Result<Vec<u8>, ShapeError> {
        match &self.format {
            ShapeFormat::Obj { path } => read(path),
            ShapeFormat::Tables { vertices, faces } => {
                let mut bytes = read(vertices)?;
                bytes.push(0);
                bytes.extend(read(faces)?);
                Ok(bytes)
            }
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ShapeError> {
    std::fs::read(path).map_err(|source| ShapeError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_string(path: &Path) -> Result<String, ShapeError> {
    String::from_utf8(read(path)?).map_err(|e| ShapeError::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })
}

/// Reads and unit-converts a mesh without validating it.
pub fn read_mesh(source: &ShapeSource) -> Result<TriMesh, ShapeError> {
    let mut mesh = match &source.format {
        ShapeFormat::Obj { path } => parse_obj(&read_string(path)?)?,
        ShapeFormat::Tables { vertices, faces } => {
            parse_tables(&read_string(vertices)?, &read_string(faces)?)?
        }
    };
    mesh.scale(source.unit.to_km());
    Ok(mesh)
}

/// Loads, unit-converts and validates a shape model.
pub fn load_shape(source: &ShapeSource) -> Result<ShapeModel, ShapeError> {
    let shape = ShapeModel::new(read_mesh(source)?)?;
    let radius = shape.circumscribing_radius();
    if !(0.1..=100.0).contains(&radius) {
        log::warn!(
            "circumscribing radius {radius:.4} km is outside [0.1, 100] km; check the length unit"
        );
    }
    Ok(shape)
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, ShapeError> {
    tok.parse().map_err(|_| ShapeError::Parse {
        line,
        message: format!("invalid number '{tok}'"),
    })
}

fn parse_index(tok: &str, nverts: usize, line: usize) -> Result<usize, ShapeError> {
    let head = tok.split('/').next().unwrap_or(tok);
    let raw: i64 = head.parse().map_err(|_| ShapeError::Parse {
        line,
        message: format!("invalid vertex index '{tok}'"),
    })?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        nverts as i64 + raw
    } else {
        -1
    };
    if idx < 0 {
        return Err(ShapeError::Parse {
            line,
            message: format!("vertex index '{tok}' does not resolve"),
        });
    }
    Ok(idx as usize)
}

/// Parses the `v`/`f` records of an OBJ file; other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh, ShapeError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let xyz: Vec<&str> = toks.collect();
                if xyz.len() < 3 {
                    return Err(ShapeError::Parse {
                        line,
                        message: "vertex record needs three coordinates".into(),
                    });
                }
                vertices.push(Vector3::new(
                    parse_f64(xyz[0], line)?,
                    parse_f64(xyz[1], line)?,
                    parse_f64(xyz[2], line)?,
                ));
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(ShapeError::NonTriangular {
                        line,
                        count: idx.len(),
                    });
                }
                let mut face = [0; 3];
                for (k, tok) in idx.iter().enumerate() {
                    face[k] = parse_index(tok, vertices.len(), line)?;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, faces))
}

fn numeric_rows(text: &str) -> Result<Vec<(usize, Vec<&str>)>, ShapeError> {
    Ok(text
        .lines()
        .enumerate()
        .filter_map(|(n, raw)| {
            let content = raw.split('#').next().unwrap_or("").trim();
            (!content.is_empty()).then(|| (n + 1, content.split_whitespace().collect()))
        })
        .collect())
}

/// Parses a vertex table (`x y z`, optionally preceded by a row index) and a
/// 1-based face table (`i j k`, optionally preceded by a row index).
pub fn parse_tables(vertex_text: &str, face_text: &str) -> Result<TriMesh, ShapeError> {
    let mut vertices = Vec::new();
    for (line, cols) in numeric_rows(vertex_text)? {
        let xyz = match cols.len() {
            3 => &cols[..],
            4 => &cols[1..],
            _ => {
                return Err(ShapeError::Parse {
                    line,
                    message: format!("vertex row has {} columns", cols.len()),
                })
            }
        };
        vertices.push(Vector3::new(
            parse_f64(xyz[0], line)?,
            parse_f64(xyz[1], line)?,
            parse_f64(xyz[2], line)?,
        ));
    }
    let mut faces = Vec::new();
    for (line, cols) in numeric_rows(face_text)? {
        let ijk = match cols.len() {
            3 => &cols[..],
            4 => &cols[1..],
            count => return Err(ShapeError::NonTriangular { line, count }),
        };
        let mut face = [0; 3];
        for (k, tok) in ijk.iter().enumerate() {
            let raw: usize = tok.parse().map_err(|_| ShapeError::Parse {
                line,
                message: format!("invalid vertex index '{tok}'"),
            })?;
            if raw == 0 {
                return Err(ShapeError::Parse {
                    line,
                    message: "face tables are 1-based; found index 0".into(),
                });
            }
            face[k] = raw - 1;
        }
        faces.push(face);
    }
    Ok(TriMesh::new(vertices, faces))
}

/// Writes a mesh as OBJ with full round-trip precision.
pub fn to_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}
