//! 3D Delaunay tetrahedralization with infinite cells, and the tetrahedron
//! adjacency graph derived from it.
//!
//! Every hull facet is closed off by an infinite cell whose fourth vertex is
//! the [`INFINITE`] sentinel, so each cell has exactly four neighbors and
//! every triangular facet is shared by exactly two cells. Neighbor `j` of a
//! cell lies across the facet opposite its local vertex `j`.
//!
//! Finite cells are positively oriented under [`predicates::orient3d`].
//! Infinite cells are oriented as if the sentinel were a point beyond their
//! hull facet.

mod build;
mod graph;
mod io;
pub mod predicates;
mod validate;

use thiserror::Error;

use crate::geom::Vec3;
use crate::pointcloud::PointCloud;
pub(crate) use build::OUTWARD_FACES;
pub use graph::{Facet, TetGraph};
pub use io::{read_tets, write_tets, TetsIoError};
pub use validate::{validate_delaunay, ValidationReport, Violation};

/// Vertex id of the point at infinity.
pub const INFINITE: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DelaunayError {
    #[error("need at least 4 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("all points are coplanar (or collinear); jitter the input to obtain a 3D triangulation")]
    Coplanar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tetrahedralization {
    points: Vec<Vec3>,
    tets: Vec<[u32; 4]>,
    neighbors: Vec<[u32; 4]>,
}

/// Builds the Delaunay tetrahedralization of `cloud`'s positions. The
/// insertion order (and thus the tet numbering) is fixed by `seed`.
pub fn build_delaunay(cloud: &PointCloud, seed: u64) -> Result<Tetrahedralization, DelaunayError> {
    build::build(cloud.positions(), seed)
}

/// [`build_delaunay`] over bare positions, which must be pairwise distinct.
pub fn build_delaunay_points(points: &[Vec3], seed: u64) -> Result<Tetrahedralization, DelaunayError> {
    build::build(points, seed)
}

impl Tetrahedralization {
    /// Assembles a tetrahedralization from raw arrays without checking it;
    /// run [`validate_delaunay`] on anything that did not come from
    /// [`build_delaunay`].
    pub fn from_raw_parts(points: Vec<Vec3>, tets: Vec<[u32; 4]>, neighbors: Vec<[u32; 4]>) -> Self {
        Tetrahedralization {
            points,
            tets,
            neighbors,
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    pub fn neighbors(&self) -> &[[u32; 4]] {
        &self.neighbors
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn num_finite(&self) -> usize {
        self.tets.iter().filter(|t| !t.contains(&INFINITE)).count()
    }

    #[inline]
    pub fn is_infinite(&self, t: usize) -> bool {
        self.tets[t].contains(&INFINITE)
    }

    /// Slot of the infinite vertex in tet `t`, if any.
    #[inline]
    pub fn infinite_slot(&self, t: usize) -> Option<usize> {
        self.tets[t].iter().position(|&v| v == INFINITE)
    }

    pub fn tet_points(&self, t: usize) -> Option<[Vec3; 4]> {
        let tet = self.tets[t];
        if tet.contains(&INFINITE) {
            return None;
        }
        Some(tet.map(|v| self.points[v as usize]))
    }

    pub fn centroid(&self, t: usize) -> Option<Vec3> {
        self.tet_points(t).map(|p| crate::geom::centroid(&p))
    }

    /// Vertex ids of the facet opposite local vertex `j`, wound so that its
    /// normal points out of tet `t`.
    pub fn outward_face(&self, t: usize, j: usize) -> [u32; 3] {
        OUTWARD_FACES[j].map(|s| self.tets[t][s])
    }

    /// Finds a tet whose closed region contains `q`: a finite tet when `q`
    /// lies in the convex hull, otherwise an infinite tet whose hull facet
    /// `q` sees. Uses a remembering stochastic walk with exact predicates.
    pub fn locate(&self, q: Vec3) -> usize {
        self.locate_from(0, q)
    }

    pub fn locate_from(&self, start: usize, q: Vec3) -> usize {
        use predicates::orient3d;
        let mut c = start.min(self.tets.len() - 1);
        if let Some(k) = self.infinite_slot(c) {
            c = self.neighbors[c][k] as usize;
        }
        let mut state = 0x2545_F491_4F6C_DD1Du64 ^ (c as u64);
        let mut prev = usize::MAX;
        'walk: loop {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let start = (state % 4) as usize;
            let mut pts = self.tet_points(c).expect("walk stays on finite tets");
            for t in 0..4 {
                let i = (start + t) % 4;
                let next = self.neighbors[c][i] as usize;
                if next == prev {
                    continue;
                }
                let saved = pts[i];
                pts[i] = q;
                let o = orient3d(pts[0], pts[1], pts[2], pts[3]);
                pts[i] = saved;
                if o < 0 {
                    prev = c;
                    c = next;
                    if self.is_infinite(c) {
                        return c;
                    }
                    continue 'walk;
                }
            }
            return c;
        }
    }

    /// Adjacency graph over all tets (infinite ones included), in tet order.
    pub fn graph(&self) -> TetGraph {
        TetGraph::from_tetrahedralization(self)
    }
}
