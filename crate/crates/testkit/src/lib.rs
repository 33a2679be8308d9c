//! Reference implementations kept deliberately naive: exact rational
//! geometry, brute-force nearest neighbors, and case generators for
//! near-degenerate predicate inputs. Nothing here shares code with the
//! library under test.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::Rng;

pub type P3 = [f64; 3];

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite coordinate")
}

fn qp(p: P3) -> [BigRational; 3] {
    [q(p[0]), q(p[1]), q(p[2])]
}

fn sub(a: &[BigRational; 3], b: &[BigRational; 3]) -> [BigRational; 3] {
    [&a[0] - &b[0], &a[1] - &b[1], &a[2] - &b[2]]
}

fn dot(a: &[BigRational; 3], b: &[BigRational; 3]) -> BigRational {
    &a[0] * &b[0] + &a[1] * &b[1] + &a[2] * &b[2]
}

fn det3(r: &[[BigRational; 3]; 3]) -> BigRational {
    &r[0][0] * (&r[1][1] * &r[2][2] - &r[1][2] * &r[2][1]) - &r[0][1] * (&r[1][0] * &r[2][2] - &r[1][2] * &r[2][0])
        + &r[0][2] * (&r[1][0] * &r[2][1] - &r[1][1] * &r[2][0])
}

fn sign(x: &BigRational) -> i8 {
    if x.is_zero() {
        0
    } else if x.is_positive() {
        1
    } else {
        -1
    }
}

/// Exact sign of `det[b - a, c - a, d - a]`.
pub fn orient3d_exact(a: P3, b: P3, c: P3, d: P3) -> i8 {
    let (a, b, c, d) = (qp(a), qp(b), qp(c), qp(d));
    sign(&det3(&[sub(&b, &a), sub(&c, &a), sub(&d, &a)]))
}

/// Exact circumcenter of a non-flat tetrahedron via Cramer's rule on
/// `2 (p_i - a) · x = |p_i|² - |a|²`.
fn circumcenter(a: &[BigRational; 3], b: &[BigRational; 3], c: &[BigRational; 3], d: &[BigRational; 3]) -> Option<[BigRational; 3]> {
    let two = BigRational::from_integer(BigInt::from(2));
    let rows = [sub(b, a), sub(c, a), sub(d, a)].map(|r| r.map(|x| &x * &two));
    let rhs = [b, c, d].map(|p| dot(p, p) - dot(a, a));
    let den = det3(&rows);
    if den.is_zero() {
        return None;
    }
    let mut out: [BigRational; 3] = [BigRational::zero(), BigRational::zero(), BigRational::zero()];
    for (col, o) in out.iter_mut().enumerate() {
        let mut m = rows.clone();
        for r in 0..3 {
            m[r][col] = rhs[r].clone();
        }
        *o = det3(&m) / &den;
    }
    Some(out)
}

/// +1 if `e` is strictly inside the circumsphere of `abcd`, -1 outside, 0 on
/// it; `None` for a flat tetrahedron. Orientation-independent.
pub fn insphere_exact(a: P3, b: P3, c: P3, d: P3, e: P3) -> Option<i8> {
    let (a, b, c, d, e) = (qp(a), qp(b), qp(c), qp(d), qp(e));
    let center = circumcenter(&a, &b, &c, &d)?;
    let ra = sub(&a, &center);
    let re = sub(&e, &center);
    let r2 = dot(&ra, &ra);
    let e2 = dot(&re, &re);
    Some(sign(&(r2 - e2)))
}

/// `k` nearest indices to point `i` (excluding `i`), ties by lower index.
pub fn brute_knn(points: &[P3], i: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (d2(*p, points[i]), j))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

pub fn d2(a: P3, b: P3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn directed(a: &[P3], b: &[P3], f: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    for &p in a {
        let mut best = f64::INFINITY;
        for &q in b {
            best = best.min(d2(p, q));
        }
        total += f(best);
    }
    total / a.len() as f64
}

/// Symmetric mean nearest-neighbor distance, halved.
pub fn brute_chamfer_l1(a: &[P3], b: &[P3]) -> f64 {
    0.5 * (directed(a, b, f64::sqrt) + directed(b, a, f64::sqrt))
}

/// Symmetric mean squared nearest-neighbor distance, halved.
pub fn brute_chamfer_squared(a: &[P3], b: &[P3]) -> f64 {
    0.5 * (directed(a, b, |x| x) + directed(b, a, |x| x))
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn random_unit<R: Rng>(rng: &mut R) -> P3 {
    loop {
        let v: P3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = d2(v, [0.0; 3]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn nudge<R: Rng>(x: f64, rng: &mut R) -> f64 {
    let mut x = x;
    for _ in 0..rng.gen_range(0..3) {
        x = if rng.gen::<bool>() { next_up(x) } else { next_down(x) };
    }
    x
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let b = x.to_bits();
    f64::from_bits(if x > 0.0 { b + 1 } else { b - 1 })
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Four points where the last lies on (or within a few ulps of) the plane
/// of the first three. About a quarter of the cases are exactly coplanar.
pub fn near_coplanar_quadruple<R: Rng>(rng: &mut R) -> [P3; 4] {
    let scale = [1.0, 1e-3, 1e3, 1.0 / 1024.0][rng.gen_range(0..4)];
    let off: P3 = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
    let pick = |rng: &mut R| -> P3 {
        [
            off[0] + scale * rng.gen_range(-1.0..1.0),
            off[1] + scale * rng.gen_range(-1.0..1.0),
            off[2] + scale * rng.gen_range(-1.0..1.0),
        ]
    };
    let (a, b, c) = (pick(rng), pick(rng), pick(rng));
    match rng.gen_range(0..4) {
        0 => {
            // Exactly coplanar: axis-aligned plane through all four.
            let axis = rng.gen_range(0..3);
            let mut pts = [a, b, c, pick(rng)];
            let v = pts[0][axis];
            for p in &mut pts {
                p[axis] = v;
            }
            pts
        }
        1 => {
            // Exactly coplanar: integer lattice points in a skew plane.
            let k = |r: &mut R| r.gen_range(-8i32..8) as f64;
            let (s, t) = (k(rng), k(rng));
            let u: P3 = [k(rng), k(rng), k(rng)];
            let v: P3 = [k(rng), k(rng), k(rng)];
            let o: P3 = [k(rng), k(rng), k(rng)];
            let p = |x: f64, y: f64| [o[0] + x * u[0] + y * v[0], o[1] + x * u[1] + y * v[1], o[2] + x * u[2] + y * v[2]];
            [p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0), p(s, t)]
        }
        _ => {
            let (s, t): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = [
                nudge(a[0] + s * (b[0] - a[0]) + t * (c[0] - a[0]), rng),
                nudge(a[1] + s * (b[1] - a[1]) + t * (c[1] - a[1]), rng),
                nudge(a[2] + s * (b[2] - a[2]) + t * (c[2] - a[2]), rng),
            ];
            [a, b, c, d]
        }
    }
}

/// Five points where the last lies on (or within a few ulps of) the sphere
/// through the first four, which are never coplanar.
pub fn near_cospherical_quintuple<R: Rng>(rng: &mut R) -> [P3; 5] {
    loop {
        let pts = match rng.gen_range(0..3) {
            0 => {
                // Exact: lattice points on the sphere of radius 15 (225 = sum of 3 squares in many ways).
                const R2: i32 = 225;
                let mut lattice = Vec::new();
                for x in -15i32..=15 {
                    for y in -15i32..=15 {
                        let z2 = R2 - x * x - y * y;
                        if z2 < 0 {
                            continue;
                        }
                        let z = (z2 as f64).sqrt() as i32;
                        if z * z == z2 {
                            lattice.push([x as f64, y as f64, z as f64]);
                            if z != 0 {
                                lattice.push([x as f64, y as f64, -z as f64]);
                            }
                        }
                    }
                }
                let shift = [rng.gen_range(-64i32..64) as f64, rng.gen_range(-64i32..64) as f64, 0.5];
                let s = [0.25, 1.0, 8.0][rng.gen_range(0..3)];
                let mut out = [[0.0; 3]; 5];
                for o in &mut out {
                    let p = lattice[rng.gen_range(0..lattice.len())];
                    *o = [p[0] * s + shift[0], p[1] * s + shift[1], p[2] * s + shift[2]];
                }
                out
            }
            _ => {
                // Rounded: points on a sphere computed in floating point, then nudged.
                let c: P3 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let r = rng.gen_range(0.01..3.0);
                let mut out = [[0.0; 3]; 5];
                for o in &mut out {
                    let u = random_unit(rng);
                    *o = [
                        nudge(c[0] + r * u[0], rng),
                        nudge(c[1] + r * u[1], rng),
                        nudge(c[2] + r * u[2], rng),
                    ];
                }
                out
            }
        };
        let distinct = (0..5).all(|i| (i + 1..5).all(|j| pts[i] != pts[j]));
        if distinct && orient3d_exact(pts[0], pts[1], pts[2], pts[3]) != 0 {
            return pts;
        }
    }
}

/// `n` points on the sphere of radius `r` with outward normals.
pub fn sphere_samples(n: usize, r: f64, seed: u64) -> (Vec<P3>, Vec<P3>) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = random_unit(&mut rng);
            let l = d2(v, [0.0; 3]).sqrt();
            let u = [v[0] / l, v[1] / l, v[2] / l];
            ([u[0] * r, u[1] * r, u[2] * r], u)
        })
        .unzip()
}

/// Dense `(A + I)` normalized by `D^{-1/2} · D^{-1/2}` for an adjacency
/// list, returned row-major.
pub fn dense_normalized_adjacency(adj: &[[u32; 4]]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut a = vec![vec![0.0; n]; n];
    for (i, nb) in adj.iter().enumerate() {
        a[i][i] += 1.0;
        for &j in nb {
            a[i][j as usize] += 1.0;
        }
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i][j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_basics() {
        let o = [0.0; 3];
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        assert_eq!(orient3d_exact(o, x, y, z), 1);
        assert_eq!(insphere_exact(o, x, y, z, [0.25; 3]), Some(1));
        assert_eq!(insphere_exact(o, x, y, z, [1.0; 3]), Some(0));
        assert_eq!(insphere_exact(o, x, y, z, [2.0; 3]), Some(-1));
        assert_eq!(brute_knn(&[o, x, y, [1.0, 1.0, 0.0]], 0, 2), vec![1, 2]);
        assert_eq!(brute_chamfer_l1(&[o], &[x]), 1.0);
    }
}
