use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::TriangleMesh;
use crate::geom::Vec3;
use crate::pointcloud::ply::{read_ply, write_ply, PlyError, PlyFormat};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("refusing to write an empty mesh")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("cannot infer mesh format from {0:?}; use .ply or .obj")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply(PlyFormat),
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshIoError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "ply" => Ok(MeshFormat::Ply(PlyFormat::BinaryLittleEndian)),
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            _ => Err(MeshIoError::UnknownFormat(path.display().to_string())),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeshIoError + '_ {
    move |source| MeshIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// OBJ text with 1-based indices; coordinates use the shortest decimal form
/// that reads back to the same `f64`.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, mut out: W) -> std::io::Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    if let Some(ns) = &mesh.normals {
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", n[0], n[1], n[2]);
        }
    }
    let with_normals = mesh.normals.is_some();
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| v + 1);
        if with_normals {
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    out.write_all(s.as_bytes())
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<(), MeshIoError> {
    let path = path.as_ref();
    if mesh.is_empty() {
        return Err(MeshIoError::Empty);
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let w = BufWriter::new(file);
    match format {
        MeshFormat::Obj => write_obj(mesh, w),
        MeshFormat::Ply(f) => write_ply(w, f, &mesh.vertices, mesh.normals.as_deref(), Some(&mesh.triangles)),
    }
    .map_err(io_err(path))
}

fn check_indices(mesh: &TriangleMesh) -> Result<(), MeshIoError> {
    let n = mesh.vertices.len();
    if let Some(t) = mesh.triangles.iter().find(|t| t.iter().any(|&v| v as usize >= n)) {
        return Err(MeshIoError::Invalid(format!("face {t:?} indexes past {n} vertices")));
    }
    Ok(())
}

/// Fan-triangulates polygons.
fn push_polygon(tris: &mut Vec<[u32; 3]>, poly: &[u32]) {
    for i in 1..poly.len().saturating_sub(1) {
        tris.push([poly[0], poly[i], poly[i + 1]]);
    }
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshIoError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut triangles = Vec::new();
    let err = |line: usize, message: String| MeshIoError::Obj { line, message };
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        match tag {
            "v" | "vn" => {
                let xs: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(ln + 1, format!("bad number {t:?}: {e}"))))
                    .collect::<Result<_, _>>()?;
                if xs.len() != 3 {
                    return Err(err(ln + 1, format!("{tag} needs three coordinates")));
                }
                let p = [xs[0], xs[1], xs[2]];
                if tag == "v" {
                    vertices.push(p);
                } else {
                    normals.push(p);
                }
            }
            "f" => {
                let mut poly = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| err(ln + 1, format!("bad face index {tok:?}")))?;
                    let idx = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                    if idx < 0 || idx >= vertices.len() as i64 {
                        return Err(err(ln + 1, format!("face index {i} out of range")));
                    }
                    poly.push(idx as u32);
                }
                if poly.len() < 3 {
                    return Err(err(ln + 1, "face with fewer than three vertices".into()));
                }
                push_polygon(&mut triangles, &poly);
            }
            _ => {}
        }
    }
    let normals = (normals.len() == vertices.len() && !normals.is_empty()).then_some(normals);
    Ok(TriangleMesh {
        vertices,
        triangles,
        normals,
    })
}

fn mesh_from_ply(bytes: &[u8]) -> Result<TriangleMesh, MeshIoError> {
    let data = read_ply(bytes)?;
    let v = data
        .element("vertex")
        .ok_or_else(|| MeshIoError::Invalid("PLY has no vertex element".into()))?;
    let col = |n: &str| v.scalar(n).ok_or_else(|| MeshIoError::Invalid(format!("vertex property {n} missing")));
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let vertices: Vec<Vec3> = (0..v.count).map(|i| [x[i], y[i], z[i]]).collect();
    let normals = match (v.scalar("nx"), v.scalar("ny"), v.scalar("nz")) {
        (Some(a), Some(b), Some(c)) => Some((0..v.count).map(|i| [a[i], b[i], c[i]]).collect()),
        _ => None,
    };
    let mut triangles = Vec::new();
    if let Some(f) = data.element("face") {
        let lists = f
            .list("vertex_indices")
            .or_else(|| f.list("vertex_index"))
            .ok_or_else(|| MeshIoError::Invalid("face element without vertex_indices".into()))?;
        for l in lists {
            if l.iter().any(|&i| i < 0) {
                return Err(MeshIoError::Invalid("negative face index".into()));
            }
            let poly: Vec<u32> = l.iter().map(|&i| i as u32).collect();
            push_polygon(&mut triangles, &poly);
        }
    }
    Ok(TriangleMesh {
        vertices,
        triangles,
        normals,
    })
}

/// Loads `.ply` or `.obj` by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, MeshIoError> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mesh = match format {
        MeshFormat::Obj => parse_obj(&String::from_utf8_lossy(&bytes))?,
        MeshFormat::Ply(_) => mesh_from_ply(&bytes)?,
    };
    check_indices(&mesh)?;
    Ok(mesh)
}
