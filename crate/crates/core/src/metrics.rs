//! Chamfer distances and normal consistency between reconstructions and
//! ground truth.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{dot, Vec3};
use crate::pointcloud::KdTree;
use crate::surface::TriangleMesh;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{0} point set is empty")]
    Empty(&'static str),
    #[error("{0} points and normals differ in length")]
    Misaligned(&'static str),
    #[error("{0} mesh is degenerate: {1}")]
    Degenerate(&'static str, String),
}

/// Squared distance from every point of `a` to its nearest point in `b`.
fn nearest_d2(a: &[Vec3], b: &KdTree) -> Vec<(usize, f64)> {
    a.par_iter().map(|&p| b.nearest(p).expect("non-empty tree")).collect()
}

fn check(a: &[Vec3], b: &[Vec3]) -> Result<(), MetricError> {
    if a.is_empty() {
        return Err(MetricError::Empty("first"));
    }
    if b.is_empty() {
        return Err(MetricError::Empty("second"));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Directed nearest-neighbor distances in both directions.
#[derive(Debug, Clone)]
pub struct Correspondence {
    /// `(nearest index in b, squared distance)` for each point of `a`.
    pub a_to_b: Vec<(usize, f64)>,
    pub b_to_a: Vec<(usize, f64)>,
}

impl Correspondence {
    pub fn compute(a: &[Vec3], b: &[Vec3]) -> Result<Self, MetricError> {
        check(a, b)?;
        let (ta, tb) = rayon::join(|| KdTree::build(a), || KdTree::build(b));
        Ok(Correspondence {
            a_to_b: nearest_d2(a, &tb),
            b_to_a: nearest_d2(b, &ta),
        })
    }

    fn symmetric(&self, f: impl Fn(f64) -> f64 + Copy) -> f64 {
        let ab = mean(self.a_to_b.iter().map(|&(_, d)| f(d)), self.a_to_b.len());
        let ba = mean(self.b_to_a.iter().map(|&(_, d)| f(d)), self.b_to_a.len());
        0.5 * (ab + ba)
    }

    pub fn chamfer_l1(&self) -> f64 {
        self.symmetric(f64::sqrt)
    }

    pub fn chamfer_squared(&self) -> f64 {
        self.symmetric(|d| d)
    }
}

/// Half the sum of the two directed mean nearest-neighbor distances.
pub fn chamfer_l1(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    Ok(Correspondence::compute(a, b)?.chamfer_l1())
}

/// Half the sum of the two directed mean squared nearest-neighbor distances.
pub fn chamfer_squared(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    Ok(Correspondence::compute(a, b)?.chamfer_squared())
}

/// Points with unit normals, e.g. area-weighted mesh samples.
#[derive(Debug, Clone, Copy)]
pub struct Oriented<'a> {
    pub points: &'a [Vec3],
    pub normals: &'a [Vec3],
}

impl<'a> Oriented<'a> {
    pub fn new(points: &'a [Vec3], normals: &'a [Vec3]) -> Self {
        Oriented { points, normals }
    }

    fn check(&self, which: &'static str) -> Result<(), MetricError> {
        if self.points.len() != self.normals.len() {
            return Err(MetricError::Misaligned(which));
        }
        Ok(())
    }
}

fn nc_from(c: &Correspondence, a: Oriented, b: Oriented) -> f64 {
    let ab = mean(c.a_to_b.iter().enumerate().map(|(i, &(j, _))| dot(a.normals[i], b.normals[j]).abs()), a.points.len());
    let ba = mean(c.b_to_a.iter().enumerate().map(|(i, &(j, _))| dot(b.normals[i], a.normals[j]).abs()), b.points.len());
    0.5 * (ab + ba)
}

/// Mean absolute cosine between each normal and the normal of its nearest
/// point in the other set, averaged over both directions.
pub fn normal_consistency(a: Oriented, b: Oriented) -> Result<f64, MetricError> {
    a.check("first")?;
    b.check("second")?;
    let c = Correspondence::compute(a.points, b.points)?;
    Ok(nc_from(&c, a, b))
}

/// How a mesh is turned into points for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointsMode {
    /// Area-weighted samples with face normals.
    Sampled,
    /// The mesh vertices with area-weighted vertex normals.
    Vertices,
}

impl std::str::FromStr for PointsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sampled" => Ok(PointsMode::Sampled),
            "vertices" => Ok(PointsMode::Vertices),
            _ => Err(format!("unknown points mode {s:?} (expected sampled or vertices)")),
        }
    }
}

impl fmt::Display for PointsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointsMode::Sampled => "sampled",
            PointsMode::Vertices => "vertices",
        })
    }
}

pub const DEFAULT_MESH_SAMPLES: usize = 100_000;

/// Evaluation points and normals of a mesh.
pub fn mesh_points(
    mesh: &TriangleMesh,
    mode: PointsMode,
    n: usize,
    seed: u64,
    which: &'static str,
) -> Result<(Vec<Vec3>, Vec<Vec3>), MetricError> {
    if mesh.is_empty() {
        return Err(MetricError::Degenerate(which, "no triangles".into()));
    }
    match mode {
        PointsMode::Sampled => mesh.sample_points(n, seed).map_err(|e| MetricError::Degenerate(which, e)),
        PointsMode::Vertices => {
            let normals = match &mesh.normals {
                Some(n) => n.clone(),
                None => {
                    let mut m = mesh.clone();
                    m.compute_vertex_normals();
                    m.normals.unwrap_or_default()
                }
            };
            // unreferenced vertices and vertices of zero-area fans carry no
            // orientation, leave them out
            let mut used = vec![false; mesh.vertices.len()];
            for t in &mesh.triangles {
                for &v in t {
                    used[v as usize] = true;
                }
            }
            let (pts, nrm): (Vec<Vec3>, Vec<Vec3>) = mesh
                .vertices
                .iter()
                .zip(&normals)
                .zip(&used)
                .filter(|&((_, n), &u)| u && dot(*n, *n) > 0.5)
                .map(|((p, n), _)| (*p, *n))
                .unzip();
            if pts.is_empty() {
                return Err(MetricError::Degenerate(which, "no oriented vertices".into()));
            }
            Ok((pts, nrm))
        }
    }
}

pub const CHAMFER_CONVENTION: &str = "half-sum-of-directed-means";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer_l1: f64,
    pub cd_squared: f64,
    pub normal_consistency: f64,
    /// Root of the squared Chamfer distance.
    pub chamfer_rms: f64,
    /// Directed mean distance from the reconstruction to the reference.
    pub accuracy_l1: f64,
    /// Directed mean distance from the reference to the reconstruction.
    pub completeness_l1: f64,
    /// Largest nearest-neighbor distance in either direction.
    pub hausdorff: f64,
    pub n_reconstruction: usize,
    pub n_reference: usize,
    pub points_mode: PointsMode,
    pub convention: String,
}

impl EvalReport {
    /// `recon` is the reconstruction, `reference` the ground truth.
    pub fn compute(recon: Oriented, reference: Oriented, mode: PointsMode) -> Result<Self, MetricError> {
        recon.check("reconstruction")?;
        reference.check("reference")?;
        if recon.points.is_empty() {
            return Err(MetricError::Empty("reconstruction"));
        }
        if reference.points.is_empty() {
            return Err(MetricError::Empty("reference"));
        }
        let c = Correspondence::compute(recon.points, reference.points)?;
        let directed = |v: &[(usize, f64)]| mean(v.iter().map(|&(_, d)| d.sqrt()), v.len());
        let hausdorff = c.a_to_b.iter().chain(&c.b_to_a).fold(0.0f64, |m, &(_, d)| m.max(d)).sqrt();
        let cd_squared = c.chamfer_squared();
        Ok(EvalReport {
            chamfer_l1: c.chamfer_l1(),
            cd_squared,
            normal_consistency: nc_from(&c, recon, reference),
            chamfer_rms: cd_squared.sqrt(),
            accuracy_l1: directed(&c.a_to_b),
            completeness_l1: directed(&c.b_to_a),
            hausdorff,
            n_reconstruction: recon.points.len(),
            n_reference: reference.points.len(),
            points_mode: mode,
            convention: CHAMFER_CONVENTION.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let rows: [(&str, String); 10] = [
            ("chamfer_l1", format!("{:.6e}", self.chamfer_l1)),
            ("cd_squared", format!("{:.6e}", self.cd_squared)),
            ("normal_consistency", format!("{:.6}", self.normal_consistency)),
            ("chamfer_rms", format!("{:.6e}", self.chamfer_rms)),
            ("accuracy_l1", format!("{:.6e}", self.accuracy_l1)),
            ("completeness_l1", format!("{:.6e}", self.completeness_l1)),
            ("hausdorff", format!("{:.6e}", self.hausdorff)),
            ("n_reconstruction", self.n_reconstruction.to_string()),
            ("n_reference", self.n_reference.to_string()),
            ("points_mode", self.points_mode.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            s.push_str(&format!("{k:<20} {v}\n"));
        }
        s.push_str(&format!("{:<20} {}\n", "convention", self.convention));
        s
    }
}
