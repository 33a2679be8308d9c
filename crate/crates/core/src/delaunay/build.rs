//! Incremental Bowyer–Watson insertion with an infinite vertex.
//!
//! Points are inserted in biased randomized order (rounds of doubling size,
//! each round sorted along a Morton curve). Each point is located by a
//! stochastic visibility walk from the most recently created cell, its
//! conflict region is grown by breadth-first search, and the cavity is
//! re-triangulated by connecting the point to every boundary facet.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::predicates::{
    collinear, coplanar_in_circle_perturbed, insphere_perturbed, orient3d,
};
use super::{DelaunayError, Tetrahedralization, INFINITE};
use crate::geom::Vec3;

const NONE: u32 = u32::MAX;

pub(super) fn build(points: &[Vec3], seed: u64) -> Result<Tetrahedralization, DelaunayError> {
    let n = points.len();
    if n < 4 {
        return Err(DelaunayError::TooFewPoints(n));
    }
    let order = insertion_order(points, seed)?;
    let mut mesh = Builder::new(points, seed);
    mesh.init_simplex([order[0], order[1], order[2], order[3]]);
    for &v in &order[4..] {
        mesh.insert(v);
    }
    Ok(mesh.finish())
}

/// Biased randomized insertion order. The first four entries always span a
/// non-degenerate tetrahedron.
fn insertion_order(points: &[Vec3], seed: u64) -> Result<Vec<u32>, DelaunayError> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng);

    // Rounds: [.., n/8), [n/8, n/4), [n/4, n/2), [n/2, n).
    let mut bounds = vec![n];
    while *bounds.last().unwrap() > 64 {
        let b = *bounds.last().unwrap() / 2;
        bounds.push(b);
    }
    bounds.push(0);
    bounds.reverse();
    bounds.dedup();
    let (lo, hi) = bounding_box(points);
    for w in bounds.windows(2) {
        let round = &mut order[w[0]..w[1]];
        round.sort_by_cached_key(|&i| morton_key(points[i as usize], lo, hi));
    }

    // Move a non-degenerate simplex to the front.
    let p = |i: usize| points[order[i] as usize];
    let i1 = 1;
    let i2 = (2..n)
        .find(|&i| !collinear(p(0), p(i1), p(i)))
        .ok_or(DelaunayError::Coplanar)?;
    let i3 = (i2 + 1..n)
        .find(|&i| orient3d(p(0), p(i1), p(i2), p(i)) != 0)
        .ok_or(DelaunayError::Coplanar)?;
    for (slot, from) in [(2usize, i2), (3usize, i3)] {
        let v = order.remove(from);
        order.insert(slot, v);
    }
    Ok(order)
}

fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

fn morton_key(p: Vec3, lo: Vec3, hi: Vec3) -> u64 {
    let mut key = 0u64;
    let mut q = [0u64; 3];
    for a in 0..3 {
        let span = hi[a] - lo[a];
        let t = if span > 0.0 { (p[a] - lo[a]) / span } else { 0.0 };
        q[a] = ((t * ((1u64 << 21) - 1) as f64) as u64).min((1 << 21) - 1);
    }
    for bit in (0..21).rev() {
        for a in 0..3 {
            key = (key << 1) | ((q[a] >> bit) & 1);
        }
    }
    key
}

/// Vertex triples of the face opposite each local vertex, ordered so that
/// their normal points out of a positively oriented cell.
pub(crate) const OUTWARD_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

struct Builder<'a> {
    points: &'a [Vec3],
    cells: Vec<[u32; 4]>,
    nbrs: Vec<[u32; 4]>,
    alive: Vec<bool>,
    free: Vec<u32>,
    // per-cell visit stamp; 2k marks conflict, 2k+1 marks tested-clear
    stamp: Vec<u32>,
    epoch: u32,
    hint: u32,
    walk_rng: u64,
    // scratch buffers reused across insertions
    stack: Vec<u32>,
    conflict: Vec<u32>,
    boundary: Vec<(u32, u8)>,
    pending: HashMap<[u32; 3], (u32, u8)>,
}

impl<'a> Builder<'a> {
    fn new(points: &'a [Vec3], seed: u64) -> Self {
        let cap = points.len() * 7;
        Builder {
            points,
            cells: Vec::with_capacity(cap),
            nbrs: Vec::with_capacity(cap),
            alive: Vec::with_capacity(cap),
            free: Vec::new(),
            stamp: Vec::with_capacity(cap),
            epoch: 0,
            hint: 0,
            walk_rng: seed ^ 0x9E37_79B9_7F4A_7C15 | 1,
            stack: Vec::new(),
            conflict: Vec::new(),
            boundary: Vec::new(),
            pending: HashMap::new(),
        }
    }

    #[inline]
    fn pt(&self, v: u32) -> Vec3 {
        self.points[v as usize]
    }

    fn alloc(&mut self, cell: [u32; 4]) -> u32 {
        if let Some(id) = self.free.pop() {
            self.cells[id as usize] = cell;
            self.nbrs[id as usize] = [NONE; 4];
            self.alive[id as usize] = true;
            id
        } else {
            self.cells.push(cell);
            self.nbrs.push([NONE; 4]);
            self.alive.push(true);
            self.stamp.push(0);
            (self.cells.len() - 1) as u32
        }
    }

    fn init_simplex(&mut self, mut v: [u32; 4]) {
        if orient3d(self.pt(v[0]), self.pt(v[1]), self.pt(v[2]), self.pt(v[3])) < 0 {
            v.swap(0, 1);
        }
        let finite = self.alloc(v);
        let mut created = vec![finite];
        for (j, face) in OUTWARD_FACES.iter().enumerate() {
            let inf = self.alloc([v[face[0]], v[face[1]], v[face[2]], INFINITE]);
            self.nbrs[finite as usize][j] = inf;
            self.nbrs[inf as usize][3] = finite;
            created.push(inf);
        }
        // Glue infinite cells along the hull edges.
        self.pending.clear();
        for &c in &created[1..] {
            for i in 0..3 {
                self.link_face(c, i);
            }
        }
        debug_assert!(self.pending.is_empty());
        self.hint = finite;
    }

    /// Registers face `i` of cell `c` and links it with its partner once
    /// both sides have been seen.
    fn link_face(&mut self, c: u32, i: usize) {
        let key = self.face_vertices_sorted(c, i);
        match self.pending.remove(&key) {
            Some((other, j)) => {
                self.nbrs[c as usize][i] = other;
                self.nbrs[other as usize][j as usize] = c;
            }
            None => {
                self.pending.insert(key, (c, i as u8));
            }
        }
    }

    fn face_vertices_sorted(&self, c: u32, i: usize) -> [u32; 3] {
        let cell = self.cells[c as usize];
        let mut out = [0u32; 3];
        let mut k = 0;
        for (s, &v) in cell.iter().enumerate() {
            if s != i {
                out[k] = v;
                k += 1;
            }
        }
        out.sort_unstable();
        out
    }

    #[inline]
    fn next_rand(&mut self) -> u64 {
        // xorshift64
        let mut x = self.walk_rng;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.walk_rng = x;
        x
    }

    /// Stochastic visibility walk toward point `v`. Returns a finite cell
    /// whose closure contains the point, or an infinite cell whose hull
    /// facet the point sees strictly.
    fn locate(&mut self, v: u32) -> u32 {
        let p = self.pt(v);
        let mut c = self.hint;
        if !self.alive[c as usize] {
            c = (0..self.cells.len() as u32).rev().find(|&i| self.alive[i as usize]).unwrap();
        }
        if let Some(k) = self.cells[c as usize].iter().position(|&x| x == INFINITE) {
            c = self.nbrs[c as usize][k];
        }
        let mut prev = NONE;
        'walk: loop {
            let cell = self.cells[c as usize];
            let start = (self.next_rand() % 4) as usize;
            for t in 0..4 {
                let i = (start + t) % 4;
                let next = self.nbrs[c as usize][i];
                if next == prev {
                    continue;
                }
                let mut q = [self.pt(cell[0]), self.pt(cell[1]), self.pt(cell[2]), self.pt(cell[3])];
                q[i] = p;
                if orient3d(q[0], q[1], q[2], q[3]) < 0 {
                    prev = c;
                    c = next;
                    if self.cells[c as usize].contains(&INFINITE) {
                        return c;
                    }
                    continue 'walk;
                }
            }
            return c;
        }
    }

    fn in_conflict(&self, c: u32, v: u32) -> bool {
        let cell = self.cells[c as usize];
        let p = self.pt(v);
        if let Some(k) = cell.iter().position(|&x| x == INFINITE) {
            let mut q = [[0.0; 3]; 4];
            for s in 0..4 {
                q[s] = if s == k { p } else { self.pt(cell[s]) };
            }
            match orient3d(q[0], q[1], q[2], q[3]) {
                0 => {
                    let f = OUTWARD_FACES[k];
                    coplanar_in_circle_perturbed(q[f[0]], q[f[1]], q[f[2]], p) > 0
                }
                o => o > 0,
            }
        } else {
            insphere_perturbed(
                self.pt(cell[0]),
                self.pt(cell[1]),
                self.pt(cell[2]),
                self.pt(cell[3]),
                p,
            ) > 0
        }
    }

    fn insert(&mut self, v: u32) {
        let start = self.locate(v);
        debug_assert!(self.in_conflict(start, v), "located cell must conflict");

        if self.epoch >= u32::MAX / 2 - 1 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 0;
        }
        self.epoch += 1;
        let conflict_mark = 2 * self.epoch;
        let clear_mark = conflict_mark + 1;

        self.stack.clear();
        self.conflict.clear();
        self.boundary.clear();
        self.stamp[start as usize] = conflict_mark;
        self.stack.push(start);
        while let Some(c) = self.stack.pop() {
            self.conflict.push(c);
            for j in 0..4 {
                let nb = self.nbrs[c as usize][j];
                let s = self.stamp[nb as usize];
                if s == conflict_mark {
                    continue;
                }
                if s == clear_mark {
                    self.boundary.push((c, j as u8));
                    continue;
                }
                if self.in_conflict(nb, v) {
                    self.stamp[nb as usize] = conflict_mark;
                    self.stack.push(nb);
                } else {
                    self.stamp[nb as usize] = clear_mark;
                    self.boundary.push((c, j as u8));
                }
            }
        }

        // Gather everything needed from the doomed cells before freeing them.
        let boundary = std::mem::take(&mut self.boundary);
        // Back slots are resolved now: once freed ids are reused, an id in
        // an outside cell's neighbor list may already refer to a new cell.
        let mut plan: Vec<([u32; 4], u32, u8, u8)> = Vec::with_capacity(boundary.len());
        for &(c, j) in &boundary {
            let mut cell = self.cells[c as usize];
            cell[j as usize] = v;
            let outside = self.nbrs[c as usize][j as usize];
            let back = self.nbrs[outside as usize]
                .iter()
                .position(|&x| x == c)
                .expect("outside cell must point back into the cavity");
            plan.push((cell, outside, back as u8, j));
        }
        for &c in &self.conflict {
            self.alive[c as usize] = false;
        }
        // Reuse slots deterministically: lowest freed id last in, first out.
        let mut freed = self.conflict.clone();
        freed.sort_unstable_by(|a, b| b.cmp(a));
        self.free.extend(freed);

        self.pending.clear();
        let mut created = Vec::with_capacity(plan.len());
        for (cell, outside, back, j) in plan {
            let id = self.alloc(cell);
            let j = j as usize;
            self.nbrs[id as usize][j] = outside;
            self.nbrs[outside as usize][back as usize] = id;
            created.push((id, j));
        }
        for &(id, j) in &created {
            for i in 0..4 {
                if i != j {
                    self.link_face(id, i);
                }
            }
        }
        debug_assert!(self.pending.is_empty(), "cavity boundary must be closed");
        self.boundary = boundary;
        if let Some(&(id, _)) = created.last() {
            self.hint = id;
        }
    }

    fn finish(self) -> Tetrahedralization {
        let mut remap = vec![NONE; self.cells.len()];
        let mut next = 0u32;
        for (i, &a) in self.alive.iter().enumerate() {
            if a {
                remap[i] = next;
                next += 1;
            }
        }
        let mut tets = Vec::with_capacity(next as usize);
        let mut neighbors = Vec::with_capacity(next as usize);
        for (i, &a) in self.alive.iter().enumerate() {
            if a {
                tets.push(self.cells[i]);
                neighbors.push(self.nbrs[i].map(|n| remap[n as usize]));
            }
        }
        Tetrahedralization {
            points: self.points.to_vec(),
            tets,
            neighbors,
        }
    }
}
