use std::collections::HashMap;

use rayon::prelude::*;

use super::predicates::{coplanar_orientation, insphere_positive, orient3d};
use super::{Tetrahedralization, INFINITE, OUTWARD_FACES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A vertex id is out of range, repeated, or a tet has several infinite slots.
    BadVertices { tet: usize },
    /// A neighbor id is out of range.
    BadNeighbor { tet: usize, slot: usize },
    /// `neighbors[tet][slot]` does not point back at `tet`.
    Asymmetric { tet: usize, slot: usize },
    /// The two tets disagree on the vertex set of their shared facet.
    FacetMismatch { tet: usize, slot: usize },
    /// A finite tet is flat or negatively oriented.
    Orientation { tet: usize },
    /// An infinite tet's hull facet faces the wrong way or is degenerate.
    InfiniteOrientation { tet: usize },
    /// A triangular facet is incident to other than two tets.
    FacetMultiplicity { vertices: [u32; 3], count: usize },
    /// A hull facet does not bound exactly one finite and one infinite tet.
    HullFacet { tet: usize, slot: usize },
    /// Input point `point` lies strictly inside the circumsphere of `tet`.
    NotEmpty { tet: usize, point: usize },
    /// An input point is not a vertex of any tet.
    MissingVertex { point: usize },
    /// V - E + F - T of the finite complex differs from 1.
    Euler { chi: i64 },
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub finite_tets: usize,
    pub infinite_tets: usize,
    pub insphere_tests: u64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of `t` and the empty-circumsphere
/// property of every finite tet against every input point, exhaustively
/// and with exact predicates. Never panics on malformed input.
pub fn validate_delaunay(t: &Tetrahedralization) -> ValidationReport {
    let n = t.points().len();
    let tets = t.tets();
    let nbrs = t.neighbors();
    let mut report = ValidationReport::default();

    if nbrs.len() != tets.len() {
        report.violations.push(Violation::BadNeighbor { tet: tets.len().min(nbrs.len()), slot: 0 });
        return report;
    }

    let mut well_formed = vec![true; tets.len()];
    for (i, tet) in tets.iter().enumerate() {
        let infinite = tet.iter().filter(|&&v| v == INFINITE).count();
        let in_range = tet.iter().all(|&v| v == INFINITE || (v as usize) < n);
        let mut s = *tet;
        s.sort_unstable();
        let distinct = s.windows(2).all(|w| w[0] != w[1]);
        if infinite > 1 || !in_range || !distinct {
            report.violations.push(Violation::BadVertices { tet: i });
            well_formed[i] = false;
        }
        if infinite == 1 {
            report.infinite_tets += 1;
        } else {
            report.finite_tets += 1;
        }
    }

    // Symmetry and matching facets.
    for (i, nb) in nbrs.iter().enumerate() {
        for (j, &o) in nb.iter().enumerate() {
            let o = o as usize;
            if o >= tets.len() {
                report.violations.push(Violation::BadNeighbor { tet: i, slot: j });
                continue;
            }
            let Some(k) = nbrs[o].iter().position(|&x| x as usize == i) else {
                report.violations.push(Violation::Asymmetric { tet: i, slot: j });
                continue;
            };
            if !well_formed[i] || !well_formed[o] {
                continue;
            }
            let mut fa = OUTWARD_FACES[j].map(|s| tets[i][s]);
            let mut fb = OUTWARD_FACES[k].map(|s| tets[o][s]);
            fa.sort_unstable();
            fb.sort_unstable();
            if fa != fb {
                report.violations.push(Violation::FacetMismatch { tet: i, slot: j });
                continue;
            }
            let (ia, ib) = (t.is_infinite(i), t.is_infinite(o));
            if ia && ib && !fa.contains(&INFINITE) {
                report.violations.push(Violation::HullFacet { tet: i, slot: j });
            }
        }
    }

    // Every facet is shared by exactly two tets.
    let mut facet_count: HashMap<[u32; 3], usize> = HashMap::with_capacity(tets.len() * 2);
    for (i, tet) in tets.iter().enumerate() {
        if !well_formed[i] {
            continue;
        }
        for face in OUTWARD_FACES {
            let mut f = face.map(|s| tet[s]);
            f.sort_unstable();
            *facet_count.entry(f).or_default() += 1;
        }
    }
    let mut bad_facets: Vec<_> = facet_count
        .iter()
        .filter(|(_, &c)| c != 2)
        .map(|(&f, &c)| (f, c))
        .collect();
    bad_facets.sort_unstable();
    for (vertices, count) in bad_facets {
        report.violations.push(Violation::FacetMultiplicity { vertices, count });
    }

    let pts = t.points();
    let mut used = vec![false; n];
    for (i, tet) in tets.iter().enumerate() {
        if !well_formed[i] {
            continue;
        }
        for &v in tet {
            if v != INFINITE {
                used[v as usize] = true;
            }
        }
    }
    for (p, u) in used.iter().enumerate() {
        if !u {
            report.violations.push(Violation::MissingVertex { point: p });
        }
    }

    // Orientation, including the hull convention for infinite tets: with the
    // infinite vertex replaced by any point strictly beyond the hull facet,
    // the tet is positive. Equivalently the opposite finite tet's apex lies
    // strictly on the negative side.
    for (i, tet) in tets.iter().enumerate() {
        if !well_formed[i] {
            continue;
        }
        match t.infinite_slot(i) {
            None => {
                let p = tet.map(|v| pts[v as usize]);
                if orient3d(p[0], p[1], p[2], p[3]) <= 0 {
                    report.violations.push(Violation::Orientation { tet: i });
                }
            }
            Some(k) => {
                let face = OUTWARD_FACES[k].map(|s| pts[tet[s] as usize]);
                // OUTWARD_FACES[k] is wound outward from this tet, i.e.
                // towards the interior of the hull.
                let across = nbrs[i][k] as usize;
                let ok = if across < tets.len() && well_formed[across] && !t.is_infinite(across) {
                    let kk = nbrs[across].iter().position(|&x| x as usize == i);
                    match kk {
                        Some(kk) => {
                            let apex = pts[tets[across][kk] as usize];
                            orient3d(face[0], face[1], face[2], apex) > 0
                        }
                        None => false,
                    }
                } else {
                    // Across a hull facet there must be a finite tet.
                    report.violations.push(Violation::HullFacet { tet: i, slot: k });
                    coplanar_orientation(face[0], face[1], face[2]) != 0
                };
                if !ok {
                    report.violations.push(Violation::InfiniteOrientation { tet: i });
                }
            }
        }
    }

    // Euler characteristic of the finite complex (a 3-ball when the
    // triangulation covers the convex hull).
    {
        let mut edges: HashMap<[u32; 2], ()> = HashMap::new();
        let mut faces: HashMap<[u32; 3], ()> = HashMap::new();
        let mut verts = vec![false; n];
        let mut tcount = 0i64;
        for (i, tet) in tets.iter().enumerate() {
            if !well_formed[i] || t.is_infinite(i) {
                continue;
            }
            tcount += 1;
            for &v in tet {
                verts[v as usize] = true;
            }
            for a in 0..4 {
                for b in a + 1..4 {
                    let mut e = [tet[a], tet[b]];
                    e.sort_unstable();
                    edges.insert(e, ());
                }
            }
            for face in OUTWARD_FACES {
                let mut f = face.map(|s| tet[s]);
                f.sort_unstable();
                faces.insert(f, ());
            }
        }
        if tcount > 0 {
            let v = verts.iter().filter(|&&b| b).count() as i64;
            let chi = v - edges.len() as i64 + faces.len() as i64 - tcount;
            if chi != 1 {
                report.violations.push(Violation::Euler { chi });
            }
        }
    }

    // Empty circumspheres.
    let finite: Vec<usize> = (0..tets.len())
        .filter(|&i| well_formed[i] && !t.is_infinite(i))
        .collect();
    let mut empty: Vec<Violation> = finite
        .par_iter()
        .flat_map_iter(|&i| {
            let tet = tets[i];
            let p = tet.map(|v| pts[v as usize]);
            if orient3d(p[0], p[1], p[2], p[3]) <= 0 {
                return Vec::new();
            }
            (0..n)
                .filter(|&q| !tet.contains(&(q as u32)) && insphere_positive(p[0], p[1], p[2], p[3], pts[q]) > 0)
                .map(|q| Violation::NotEmpty { tet: i, point: q })
                .collect::<Vec<_>>()
        })
        .collect();
    report.insphere_tests = finite.len() as u64 * n.saturating_sub(4) as u64;
    report.violations.append(&mut empty);
    report
}
