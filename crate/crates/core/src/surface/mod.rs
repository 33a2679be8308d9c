//! Triangle meshes: extraction from labeled tetrahedra, Laplacian
//! smoothing, topology checks and file I/O.

mod io;
mod topology;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delaunay::{Tetrahedralization, INFINITE};
use crate::geom::{add, scale, sub, triangle_area, triangle_normal, Vec3};

pub use io::{load_mesh, parse_obj, save_mesh, write_obj, MeshFormat, MeshIoError};
pub use topology::{watertight_check, WatertightReport};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        TriangleMesh {
            vertices,
            triangles,
            normals: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|v| self.vertices[v as usize])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                triangle_area(a, b, c)
            })
            .sum()
    }

    /// Unit normal of triangle `t` following its winding, `None` if degenerate.
    pub fn face_normal(&self, t: usize) -> Option<Vec3> {
        let [a, b, c] = self.corners(t);
        crate::geom::normalize(triangle_normal(a, b, c))
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|v| self.vertices[v as usize]);
            let n = triangle_normal(a, b, c);
            for &v in tri {
                acc[v as usize] = add(acc[v as usize], n);
            }
        }
        self.normals = Some(acc.into_iter().map(|n| crate::geom::normalize(n).unwrap_or([0.0; 3])).collect());
    }

    /// `n` points distributed uniformly by area with their face normals.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>), String> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            total += triangle_area(a, b, c);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err("mesh has zero surface area".into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        let mut nrm = Vec::with_capacity(n);
        while pts.len() < n {
            let r = rng.gen::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            let Some(normal) = self.face_normal(t) else { continue };
            let [a, b, c] = self.corners(t);
            let (s1, s2): (f64, f64) = (rng.gen::<f64>().sqrt(), rng.gen());
            let (wa, wb, wc) = (1.0 - s1, s1 * (1.0 - s2), s1 * s2);
            pts.push([0, 1, 2].map(|i| wa * a[i] + wb * b[i] + wc * c[i]));
            nrm.push(normal);
        }
        Ok((pts, nrm))
    }

    /// Same facets with every winding reversed.
    pub fn flipped(&self) -> Self {
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self.normals.as_ref().map(|ns| ns.iter().map(|&n| scale(n, -1.0)).collect()),
        }
    }
}

/// One triangle per facet whose two tets carry different labels, wound so
/// its normal points from the inside tet to the outside tet. Facets through
/// the infinite vertex have no geometry and are skipped. Vertices are the
/// referenced cloud points, renumbered in order of first use.
pub fn extract_surface(t: &Tetrahedralization, inside: &[bool]) -> TriangleMesh {
    assert_eq!(inside.len(), t.num_tets(), "one label per tetrahedron");
    let mut remap: HashMap<u32, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (a, nb) in t.neighbors().iter().enumerate() {
        for (j, &b) in nb.iter().enumerate() {
            if (a as u32) > b || inside[a] == inside[b as usize] {
                continue;
            }
            let face = t.outward_face(a, j);
            if face.contains(&INFINITE) {
                continue;
            }
            // outward from `a`, which is correct when `a` is the inside tet
            let face = if inside[a] { face } else { [face[0], face[2], face[1]] };
            triangles.push(face.map(|v| {
                *remap.entry(v).or_insert_with(|| {
                    vertices.push(t.points()[v as usize]);
                    (vertices.len() - 1) as u32
                })
            }));
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Vertices whose incident triangles form one closed fan; only these move
/// during smoothing.
pub fn manifold_vertices(mesh: &TriangleMesh) -> Vec<bool> {
    let n = mesh.vertices.len();
    let mut link: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
    for &[a, b, c] in &mesh.triangles {
        link[a as usize].push((b, c));
        link[b as usize].push((c, a));
        link[c as usize].push((a, b));
    }
    link.iter()
        .map(|edges| {
            if edges.len() < 3 {
                return false;
            }
            // every link vertex has degree two and the link is one cycle
            let mut deg: HashMap<u32, usize> = HashMap::new();
            for &(x, y) in edges {
                *deg.entry(x).or_default() += 1;
                *deg.entry(y).or_default() += 1;
            }
            if deg.values().any(|&d| d != 2) || deg.len() != edges.len() {
                return false;
            }
            let mut next: HashMap<u32, Vec<u32>> = HashMap::new();
            for &(x, y) in edges {
                next.entry(x).or_default().push(y);
                next.entry(y).or_default().push(x);
            }
            let start = edges[0].0;
            let (mut prev, mut cur, mut steps) = (start, edges[0].1, 1);
            while cur != start {
                let nx = &next[&cur];
                let step = if nx[0] != prev { nx[0] } else { nx[1] };
                prev = cur;
                cur = step;
                steps += 1;
                if steps > edges.len() {
                    return false;
                }
            }
            steps == edges.len()
        })
        .collect()
}

/// Uniform-weight Laplacian smoothing with simultaneous updates:
/// `v ← v + λ (mean of 1-ring − v)`. Vertices that are not manifold (see
/// [`manifold_vertices`]), including boundary vertices, stay fixed.
pub fn laplacian_smooth(mesh: &TriangleMesh, iterations: usize, lambda: f64) -> TriangleMesh {
    assert!(lambda > 0.0 && lambda <= 1.0, "lambda must be in (0, 1]");
    let mut out = mesh.clone();
    if iterations == 0 {
        return out;
    }
    let movable = manifold_vertices(mesh);
    let mut ring: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); mesh.vertices.len()];
    for &[a, b, c] in &mesh.triangles {
        for (x, y) in [(a, b), (b, c), (c, a)] {
            ring[x as usize].insert(y);
            ring[y as usize].insert(x);
        }
    }
    let ring: Vec<Vec<u32>> = ring.into_iter().map(|s| s.into_iter().collect()).collect();
    for _ in 0..iterations {
        let prev = out.vertices.clone();
        for (i, v) in out.vertices.iter_mut().enumerate() {
            if !movable[i] || ring[i].is_empty() {
                continue;
            }
            let mut mean = [0.0; 3];
            for &j in &ring[i] {
                mean = add(mean, prev[j as usize]);
            }
            let mean = scale(mean, 1.0 / ring[i].len() as f64);
            *v = add(prev[i], scale(sub(mean, prev[i]), lambda));
        }
    }
    if out.normals.is_some() {
        out.compute_vertex_normals();
    }
    out
}
