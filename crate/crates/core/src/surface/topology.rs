use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::TriangleMesh;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WatertightReport {
    /// Number of undirected edges per incidence count (triangles sharing it).
    pub edge_incidence: BTreeMap<usize, usize>,
    pub boundary_edges: usize,
    /// Edges shared by more than two triangles.
    pub non_manifold_edges: usize,
    pub degenerate_triangles: usize,
    pub components: usize,
    /// `V − E + F` of each connected component, largest first.
    pub euler_per_component: Vec<i64>,
    pub euler: i64,
    /// Every shared edge is traversed equally often in both directions.
    pub consistently_oriented: bool,
}

impl WatertightReport {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edges == 0
            && self.non_manifold_edges == 0
            && self.degenerate_triangles == 0
            && self.consistently_oriented
            && self.edge_incidence.keys().all(|&k| k == 2)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn watertight_check(mesh: &TriangleMesh) -> WatertightReport {
    // directed edge counts keyed by the undirected pair (lo, hi): [lo→hi, hi→lo]
    let mut edges: HashMap<(u32, u32), [usize; 2]> = HashMap::new();
    let mut degenerate = 0;
    let nv = mesh.vertices.len();
    let mut parent: Vec<usize> = (0..nv).collect();
    let mut used = vec![false; nv];
    for &[a, b, c] in &mesh.triangles {
        if a == b || b == c || a == c {
            degenerate += 1;
            continue;
        }
        for (x, y) in [(a, b), (b, c), (c, a)] {
            let e = edges.entry((x.min(y), x.max(y))).or_default();
            e[usize::from(x > y)] += 1;
            let (rx, ry) = (find(&mut parent, x as usize), find(&mut parent, y as usize));
            parent[rx] = ry;
        }
        for v in [a, b, c] {
            used[v as usize] = true;
        }
    }
    let mut edge_incidence = BTreeMap::new();
    let mut boundary = 0;
    let mut non_manifold = 0;
    let mut oriented = true;
    for d in edges.values() {
        let inc = d[0] + d[1];
        *edge_incidence.entry(inc).or_insert(0) += 1;
        if inc == 1 {
            boundary += 1;
        }
        if inc > 2 {
            non_manifold += 1;
        }
        if inc >= 2 && d[0] != d[1] {
            oriented = false;
        }
    }
    // per-component V, E, F
    let mut comp: BTreeMap<usize, [i64; 3]> = BTreeMap::new();
    for v in 0..nv {
        if used[v] {
            comp.entry(find(&mut parent, v)).or_default()[0] += 1;
        }
    }
    for &(a, _) in edges.keys() {
        comp.get_mut(&find(&mut parent, a as usize)).unwrap()[1] += 1;
    }
    for &[a, b, c] in &mesh.triangles {
        if a != b && b != c && a != c {
            comp.get_mut(&find(&mut parent, a as usize)).unwrap()[2] += 1;
        }
    }
    let mut per: Vec<([i64; 3], i64)> = comp.values().map(|&[v, e, f]| ([v, e, f], v - e + f)).collect();
    per.sort_by(|a, b| b.0[2].cmp(&a.0[2]).then(a.1.cmp(&b.1)));
    WatertightReport {
        edge_incidence,
        boundary_edges: boundary,
        non_manifold_edges: non_manifold,
        degenerate_triangles: degenerate,
        components: per.len(),
        euler: per.iter().map(|p| p.1).sum(),
        euler_per_component: per.into_iter().map(|p| p.1).collect(),
        consistently_oriented: oriented,
    }
}
