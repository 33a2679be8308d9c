use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use super::shapes::Shape;
use crate::delaunay::Tetrahedralization;
use crate::geom::{cross, dot, norm, scale, sub, Vec3};
use crate::surface::{watertight_check, TriangleMesh};

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("mesh oracle is not watertight ({boundary} boundary edges, {non_manifold} non-manifold edges)")]
    NotWatertight { boundary: usize, non_manifold: usize },
    #[error("ray casting from point {index} {point:?} stayed degenerate after {tries} directions")]
    Degenerate { index: usize, point: Vec3, tries: usize },
    #[error("N_ref must be at least 1")]
    NoReferences,
    #[error("{0}")]
    Shape(String),
}

/// Ground truth for inside/outside queries.
#[derive(Debug, Clone)]
pub enum InsideOracle {
    Analytic(Shape),
    Mesh(TriangleMesh),
}

impl InsideOracle {
    pub fn label(&self, points: &[Vec3], seed: u64) -> Result<Vec<bool>, LabelError> {
        match self {
            InsideOracle::Analytic(s) => Ok(label_locations_analytic(points, s)),
            InsideOracle::Mesh(m) => label_locations_mesh(points, m, seed),
        }
    }

    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>), LabelError> {
        match self {
            InsideOracle::Analytic(s) => s.sample_surface(n, seed).map_err(|e| LabelError::Shape(e.to_string())),
            InsideOracle::Mesh(m) => m.sample_points(n, seed).map_err(LabelError::Shape),
        }
    }
}

/// `n_ref` uniform points in every finite tet (Dirichlet(1,1,1,1)
/// barycentric weights from normalized exponentials); infinite tets get
/// none. Each tet draws from its own stream, so the result does not depend
/// on scheduling.
pub fn sample_reference_locations(t: &Tetrahedralization, n_ref: usize, seed: u64) -> Result<Vec<Vec<Vec3>>, LabelError> {
    if n_ref == 0 {
        return Err(LabelError::NoReferences);
    }
    Ok((0..t.num_tets())
        .into_par_iter()
        .map(|i| {
            let Some(corners) = t.tet_points(i) else {
                return Vec::new();
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..n_ref).map(|_| uniform_in_tet(&corners, &mut rng)).collect()
        })
        .collect())
}

pub fn uniform_in_tet<R: Rng>(c: &[Vec3; 4], rng: &mut R) -> Vec3 {
    let e: [f64; 4] = [rng.sample(Exp1), rng.sample(Exp1), rng.sample(Exp1), rng.sample(Exp1)];
    let s = e[0] + e[1] + e[2] + e[3];
    let mut p = [0.0; 3];
    for (k, corner) in c.iter().enumerate() {
        for d in 0..3 {
            p[d] += e[k] / s * corner[d];
        }
    }
    p
}

pub fn label_locations_analytic(points: &[Vec3], shape: &Shape) -> Vec<bool> {
    points.par_iter().map(|&p| shape.contains(p)).collect()
}

pub const RAY_RETRIES: usize = 16;

enum Hit {
    Miss,
    Hit,
    Degenerate,
}

/// Möller–Trumbore with margins: grazing edges, vertices, parallel planes
/// and origins on the triangle are reported as degenerate.
fn ray_triangle(o: Vec3, d: Vec3, [a, b, c]: [Vec3; 3], tol: f64) -> Hit {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let pv = cross(d, e2);
    let det = dot(e1, pv);
    let scale_ = norm(e1) * norm(e2);
    if det.abs() <= 1e-12 * scale_ {
        // ray parallel to the plane: only a problem if it lies in it
        let n = cross(e1, e2);
        return if dot(sub(o, a), n).abs() <= tol * norm(n) { Hit::Degenerate } else { Hit::Miss };
    }
    let inv = 1.0 / det;
    let tv = sub(o, a);
    let u = dot(tv, pv) * inv;
    let qv = cross(tv, e1);
    let v = dot(d, qv) * inv;
    let t = dot(e2, qv) * inv;
    let eps = 1e-9;
    if u < -eps || v < -eps || u + v > 1.0 + eps || t < -tol {
        return Hit::Miss;
    }
    if u <= eps || v <= eps || u + v >= 1.0 - eps || t.abs() <= tol {
        return Hit::Degenerate;
    }
    Hit::Hit
}

/// Inside test by ray-crossing parity against a watertight mesh. A ray
/// that grazes an edge or vertex is recast in a fresh random direction.
pub fn label_locations_mesh(points: &[Vec3], mesh: &TriangleMesh, seed: u64) -> Result<Vec<bool>, LabelError> {
    let report = watertight_check(mesh);
    if !report.is_watertight() {
        return Err(LabelError::NotWatertight {
            boundary: report.boundary_edges,
            non_manifold: report.non_manifold_edges,
        });
    }
    let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.corners(t)).collect();
    let extent = mesh.vertices.iter().fold(0.0f64, |m, v| m.max(norm(*v)));
    let tol = 1e-12 * extent.max(1.0);
    points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            'dir: for _ in 0..RAY_RETRIES {
                let d = loop {
                    let g: Vec3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    let l = norm(g);
                    if l > 0.1 && l <= 1.0 {
                        break scale(g, 1.0 / l);
                    }
                };
                let mut crossings = 0usize;
                for tri in &tris {
                    match ray_triangle(p, d, *tri, tol) {
                        Hit::Miss => {}
                        Hit::Hit => crossings += 1,
                        Hit::Degenerate => continue 'dir,
                    }
                }
                return Ok(crossings % 2 == 1);
            }
            Err(LabelError::Degenerate {
                index: i,
                point: p,
                tries: RAY_RETRIES,
            })
        })
        .collect()
}

/// Per-tet reference labels, `n_ref` per tet (`true` = inside).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceLabels {
    n_ref: usize,
    labels: Vec<bool>,
    valid: Vec<bool>,
}

impl ReferenceLabels {
    pub fn new(n_ref: usize, labels: Vec<bool>, valid: Vec<bool>) -> Result<Self, LabelError> {
        if n_ref == 0 {
            return Err(LabelError::NoReferences);
        }
        assert_eq!(labels.len(), valid.len() * n_ref, "label count");
        Ok(ReferenceLabels { n_ref, labels, valid })
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn num_tets(&self) -> usize {
        self.valid.len()
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn of(&self, t: usize) -> &[bool] {
        &self.labels[t * self.n_ref..(t + 1) * self.n_ref]
    }

    pub fn inside_count(&self, t: usize) -> usize {
        self.of(t).iter().filter(|&&l| l).count()
    }

    /// Majority vote; an exact tie counts as outside.
    pub fn majority(&self, t: usize) -> bool {
        2 * self.inside_count(t) > self.n_ref
    }

    /// Inside and outside label counts per tet, zero for invalid tets.
    pub fn counts(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.num_tets())
            .map(|t| {
                if !self.valid[t] {
                    return (0.0, 0.0);
                }
                let pos = self.inside_count(t);
                (pos as f64, (self.n_ref - pos) as f64)
            })
            .unzip()
    }
}

/// Labels every tet: finite tets by their reference locations, infinite
/// tets all outside (they lie beyond the hull of a closed surface sample).
pub fn label_tetrahedra(
    t: &Tetrahedralization,
    locations: &[Vec<Vec3>],
    n_ref: usize,
    oracle: &InsideOracle,
    seed: u64,
) -> Result<ReferenceLabels, LabelError> {
    let flat: Vec<Vec3> = locations.iter().flatten().copied().collect();
    let inside = oracle.label(&flat, seed)?;
    let mut labels = Vec::with_capacity(t.num_tets() * n_ref);
    let mut k = 0;
    for (i, locs) in locations.iter().enumerate() {
        if t.is_infinite(i) {
            labels.extend(std::iter::repeat_n(false, n_ref));
        } else {
            assert_eq!(locs.len(), n_ref, "reference locations per finite tet");
            labels.extend_from_slice(&inside[k..k + n_ref]);
            k += n_ref;
        }
    }
    ReferenceLabels::new(n_ref, labels, vec![true; t.num_tets()])
}
