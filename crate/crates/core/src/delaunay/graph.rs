use super::{Tetrahedralization, OUTWARD_FACES};

/// One undirected graph edge: the triangular facet shared by `tets[0]` and
/// `tets[1]`, with `tets[0] < tets[1]`. `vertices` are wound so the facet
/// normal points out of `tets[0]`, and `slots[k]` is the local index of the
/// opposite vertex in `tets[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Facet {
    pub tets: [u32; 2],
    pub slots: [u8; 2],
    pub vertices: [u32; 3],
}

/// Tetrahedron adjacency graph. Node `i` is tet `i`; every node has exactly
/// four neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct TetGraph {
    adjacency: Vec<[u32; 4]>,
    facets: Vec<Facet>,
    facet_of: Vec<[u32; 4]>,
}

impl TetGraph {
    pub fn from_tetrahedralization(t: &Tetrahedralization) -> Self {
        let adjacency = t.neighbors().to_vec();
        let mut facets = Vec::with_capacity(adjacency.len() * 2);
        let mut facet_of = vec![[u32::MAX; 4]; adjacency.len()];
        for (a, nb) in adjacency.iter().enumerate() {
            for (j, &b) in nb.iter().enumerate() {
                if (a as u32) < b {
                    let k = adjacency[b as usize]
                        .iter()
                        .position(|&x| x == a as u32)
                        .expect("neighbor relation is symmetric");
                    let id = facets.len() as u32;
                    facet_of[a][j] = id;
                    facet_of[b as usize][k] = id;
                    facets.push(Facet {
                        tets: [a as u32, b],
                        slots: [j as u8, k as u8],
                        vertices: OUTWARD_FACES[j].map(|s| t.tets()[a][s]),
                    });
                }
            }
        }
        TetGraph {
            adjacency,
            facets,
            facet_of,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn adjacency(&self) -> &[[u32; 4]] {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> [u32; 4] {
        self.adjacency[i]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Facet id across local slot `j` of tet `i`.
    pub fn facet_of(&self, i: usize, j: usize) -> u32 {
        self.facet_of[i][j]
    }

    /// Adjacency as a flat row-major `N × 4` array.
    pub fn flat_adjacency(&self) -> Vec<u32> {
        self.adjacency.iter().flatten().copied().collect()
    }
}
