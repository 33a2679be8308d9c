//! Exact geometric predicates and their symbolically perturbed variants.
//!
//! `orient3d` and `insphere` are exact for every finite `f64` input that does
//! not overflow: a floating-point filter answers most calls and adaptive
//! expansion arithmetic takes over near degeneracy.
//!
//! The perturbed predicates never return 0. Ties are broken as if each point
//! were lifted by an infinitesimal that grows with its rank in lexicographic
//! `(x, y, z)` order, so every cospherical or coplanar configuration resolves
//! consistently across all calls.

use std::cmp::Ordering;

use robust::{Coord, Coord3D};
use thiserror::Error;

use crate::geom::Vec3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PredicateError {
    #[error("degenerate tetrahedron: the four points are coplanar")]
    DegenerateTetrahedron,
}

#[inline]
fn c3(p: Vec3) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

#[inline]
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Sign of `det[b - a, c - a, d - a]`: +1 when `d` lies on the side of plane
/// `abc` that `(b - a) × (c - a)` points to, 0 when the four are coplanar.
#[inline]
pub fn orient3d(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> i8 {
    // robust uses det[a - d, b - d, c - d], the opposite sign.
    -sign(robust::orient3d(c3(a), c3(b), c3(c), c3(d)))
}

/// +1 if `e` lies strictly inside the sphere through `a, b, c, d`, -1 if
/// strictly outside, 0 if on it. Any non-degenerate orientation of `abcd` is
/// accepted; only a flat tetrahedron is an error.
pub fn insphere(a: Vec3, b: Vec3, c: Vec3, d: Vec3, e: Vec3) -> Result<i8, PredicateError> {
    match orient3d(a, b, c, d) {
        0 => Err(PredicateError::DegenerateTetrahedron),
        o => Ok(o * insphere_positive(a, b, c, d, e)),
    }
}

/// [`insphere`] without the orientation check: `abcd` must already be
/// positively oriented.
#[inline]
pub fn insphere_positive(a: Vec3, b: Vec3, c: Vec3, d: Vec3, e: Vec3) -> i8 {
    // With our orientation convention robust reports inside as negative.
    -sign(robust::insphere(c3(a), c3(b), c3(c), c3(d), c3(e)))
}

#[inline]
fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> i8 {
    sign(robust::orient2d(
        Coord { x: a[0], y: a[1] },
        Coord { x: b[0], y: b[1] },
        Coord { x: c[0], y: c[1] },
    ))
}

/// Orientation of three points inside their common plane. Nonzero iff they
/// are not collinear; for any fixed plane, all calls agree on which turning
/// sense is positive.
pub fn coplanar_orientation(p: Vec3, q: Vec3, r: Vec3) -> i8 {
    let o = orient2d([p[0], p[1]], [q[0], q[1]], [r[0], r[1]]);
    if o != 0 {
        return o;
    }
    let o = orient2d([p[1], p[2]], [q[1], q[2]], [r[1], r[2]]);
    if o != 0 {
        return o;
    }
    orient2d([p[0], p[2]], [q[0], q[2]], [r[0], r[2]])
}

pub fn collinear(p: Vec3, q: Vec3, r: Vec3) -> bool {
    coplanar_orientation(p, q, r) == 0
}

/// For `p` coplanar with the non-collinear triangle `abc`: +1 if `p` lies
/// strictly inside the circumcircle of `abc`, -1 outside, 0 on it.
pub fn coplanar_in_circle(a: Vec3, b: Vec3, c: Vec3, p: Vec3) -> i8 {
    // Any sphere through a, b, c cuts their plane in exactly their
    // circumcircle, so an insphere test against an off-plane apex decides it.
    let apex = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
        .into_iter()
        .map(|e| [a[0] + e[0], a[1] + e[1], a[2] + e[2]])
        .find(|&q| orient3d(a, b, c, q) != 0);
    let Some(q) = apex else {
        // Only reachable when |a| is so large that a + 1 rounds back to a.
        let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let q = [a[0] + scale, a[1] + 2.0 * scale, a[2] + 3.0 * scale];
        let o = orient3d(a, b, c, q);
        debug_assert!(o != 0);
        return o * insphere_positive(a, b, c, q, p);
    };
    // The raw determinant flips sign with the orientation of abcq.
    orient3d(a, b, c, q) * insphere_positive(a, b, c, q, p)
}

#[inline]
fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Perturbed in-sphere test for a positively oriented `p0 p1 p2 p3`: +1 if
/// `p` is (symbolically) inside, -1 otherwise. The five points must be
/// pairwise distinct.
pub fn insphere_perturbed(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3, p: Vec3) -> i8 {
    let s = insphere_positive(p0, p1, p2, p3, p);
    if s != 0 {
        return s;
    }
    // Slot 4 is the query; slots 0..4 are the tetrahedron.
    let pts = [p0, p1, p2, p3, p];
    let mut order = [0usize, 1, 2, 3, 4];
    order.sort_by(|&a, &b| lex_cmp(&pts[a], &pts[b]));
    // Examine the leading monomials from the largest point down.
    for &slot in order[2..].iter().rev() {
        let o = match slot {
            4 => return -1,
            3 => orient3d(p0, p1, p2, p),
            2 => orient3d(p0, p1, p, p3),
            1 => orient3d(p0, p, p2, p3),
            _ => orient3d(p, p1, p2, p3),
        };
        if o != 0 {
            return o;
        }
    }
    debug_assert!(false, "perturbed insphere did not resolve");
    -1
}

/// Perturbed circumcircle test for `p` coplanar with triangle `p0 p1 p2`:
/// +1 inside, -1 outside. This is the limit of [`insphere_perturbed`] as the
/// fourth vertex moves to infinity, used for hull facets.
pub fn coplanar_in_circle_perturbed(p0: Vec3, p1: Vec3, p2: Vec3, p: Vec3) -> i8 {
    let s = coplanar_in_circle(p0, p1, p2, p);
    if s != 0 {
        return s;
    }
    let pts = [p0, p1, p2, p];
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| lex_cmp(&pts[a], &pts[b]));
    let local = coplanar_orientation(p0, p1, p2);
    for &slot in order[1..].iter().rev() {
        let o = match slot {
            3 => return -1,
            2 => coplanar_orientation(p0, p1, p),
            1 => coplanar_orientation(p0, p, p2),
            _ => coplanar_orientation(p, p1, p2),
        };
        if o != 0 {
            return o * local;
        }
    }
    -1
}

#[cfg(test)]
mod tests {
    use super::*;

    const O: Vec3 = [0.0, 0.0, 0.0];
    const X: Vec3 = [1.0, 0.0, 0.0];
    const Y: Vec3 = [0.0, 1.0, 0.0];
    const Z: Vec3 = [0.0, 0.0, 1.0];

    #[test]
    fn unit_simplex_is_positive() {
        assert_eq!(orient3d(O, X, Y, Z), 1);
        assert_eq!(orient3d(O, Y, X, Z), -1);
        assert_eq!(orient3d(O, X, Y, [0.3, 0.7, 0.0]), 0);
    }

    #[test]
    fn insphere_basic() {
        let c = [0.25, 0.25, 0.25];
        assert_eq!(insphere(O, X, Y, Z, c), Ok(1));
        assert_eq!(insphere(O, Y, X, Z, c), Ok(1));
        assert_eq!(insphere(O, X, Y, Z, [10.0, 10.0, 10.0]), Ok(-1));
        // (1,1,1) lies on the sphere through the unit simplex.
        assert_eq!(insphere(O, X, Y, Z, [1.0, 1.0, 1.0]), Ok(0));
        assert_eq!(
            insphere(O, X, Y, [1.0, 1.0, 0.0], c),
            Err(PredicateError::DegenerateTetrahedron)
        );
    }

    #[test]
    fn perturbation_resolves_cospherical() {
        let e = [1.0, 1.0, 1.0];
        let s = insphere_perturbed(O, X, Y, Z, e);
        assert!(s == 1 || s == -1);
        // Consistency: among the two tetrahedra {O,X,Y,e} arrangements, the
        // perturbed answer is antisymmetric under swapping roles.
        assert_eq!(coplanar_in_circle(O, X, Y, [1.0, 1.0, 0.0]), 0);
        assert_ne!(coplanar_in_circle_perturbed(O, X, Y, [1.0, 1.0, 0.0]), 0);
    }

    #[test]
    fn coplanar_circle() {
        assert_eq!(coplanar_in_circle(O, X, Y, [0.2, 0.2, 0.0]), 1);
        assert_eq!(coplanar_in_circle(O, Y, X, [0.2, 0.2, 0.0]), 1);
        assert_eq!(coplanar_in_circle(O, X, Y, [3.0, 3.0, 0.0]), -1);
        // a tilted plane
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 1.0];
        let c = [0.0, 1.0, 1.0];
        assert_eq!(coplanar_in_circle(a, b, c, [0.25, 0.25, 0.5]), 1);
        assert_eq!(coplanar_in_circle(a, b, c, [2.0, 2.0, 4.0]), -1);
    }
}
