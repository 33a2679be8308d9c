//! Analytic solids with exact inside tests, a small expression syntax for
//! them and area-uniform surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{norm, scale, sub, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("shape spec, column {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("invalid shape: {0}")]
    Invalid(String),
    #[error("could not draw {wanted} surface samples ({got} after {attempts} attempts); is the surface empty?")]
    Sampling { wanted: usize, got: usize, attempts: usize },
}

/// Solids bounded by spheres, boxes and tori (torus axis along z), combined
/// by union and difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    Torus { center: Vec3, major: f64, minor: f64 },
    Union { a: Box<Shape>, b: Box<Shape> },
    Difference { a: Box<Shape>, b: Box<Shape> },
}

impl Shape {
    pub fn sphere(radius: f64) -> Self {
        Shape::Sphere {
            center: [0.0; 3],
            radius,
        }
    }

    pub fn cube(half: f64) -> Self {
        Shape::Box {
            center: [0.0; 3],
            half_extents: [half; 3],
        }
    }

    pub fn torus(major: f64, minor: f64) -> Self {
        Shape::Torus {
            center: [0.0; 3],
            major,
            minor,
        }
    }

    pub fn union(a: Shape, b: Shape) -> Self {
        Shape::Union {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    pub fn difference(a: Shape, b: Shape) -> Self {
        Shape::Difference {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        let bad = |m: String| Err(ShapeError::Invalid(m));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Shape::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0 && radius.is_finite()) {
                    return bad(format!("sphere radius must be positive, got {radius}"));
                }
            }
            Shape::Box { center, half_extents } => {
                if !finite(center) || !half_extents.iter().all(|&h| h > 0.0 && h.is_finite()) {
                    return bad(format!("box half extents must be positive, got {half_extents:?}"));
                }
            }
            Shape::Torus { center, major, minor } => {
                if !finite(center) || !(*minor > 0.0 && minor < major && major.is_finite()) {
                    return bad(format!("torus needs 0 < minor < major, got major {major}, minor {minor}"));
                }
            }
            Shape::Union { a, b } | Shape::Difference { a, b } => {
                a.validate()?;
                b.validate()?;
            }
        }
        Ok(())
    }

    /// Signed distance bound: negative inside. Exact for the primitives;
    /// union and difference compose by `min` and `max(a, -b)`, which keeps
    /// the sign exact.
    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => norm(sub(p, *center)) - radius,
            Shape::Box { center, half_extents } => {
                let q = sub(p, *center);
                let d = [0, 1, 2].map(|i| q[i].abs() - half_extents[i]);
                let outside = norm(d.map(|x| x.max(0.0)));
                outside + d[0].max(d[1]).max(d[2]).min(0.0)
            }
            Shape::Torus { center, major, minor } => {
                let q = sub(p, *center);
                let ring = (q[0] * q[0] + q[1] * q[1]).sqrt() - major;
                (ring * ring + q[2] * q[2]).sqrt() - minor
            }
            Shape::Union { a, b } => a.sdf(p).min(b.sdf(p)),
            Shape::Difference { a, b } => a.sdf(p).max(-b.sdf(p)),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.sdf(p) < 0.0
    }

    /// Surface area of all primitive boundaries (an upper bound on the
    /// solid's own surface area for composites).
    fn candidate_area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Box { half_extents: h, .. } => 8.0 * (h[1] * h[2] + h[0] * h[2] + h[0] * h[1]),
            Shape::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
            Shape::Union { a, b } | Shape::Difference { a, b } => a.candidate_area() + b.candidate_area(),
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Shape::Box { center, half_extents } => (
                [0, 1, 2].map(|i| center[i] - half_extents[i]),
                [0, 1, 2].map(|i| center[i] + half_extents[i]),
            ),
            Shape::Torus { center, major, minor } => {
                let e = [major + minor, major + minor, *minor];
                ([0, 1, 2].map(|i| center[i] - e[i]), [0, 1, 2].map(|i| center[i] + e[i]))
            }
            Shape::Union { a, b } => {
                let (a0, a1) = a.bounds();
                let (b0, b1) = b.bounds();
                ([0, 1, 2].map(|i| a0[i].min(b0[i])), [0, 1, 2].map(|i| a1[i].max(b1[i])))
            }
            Shape::Difference { a, .. } => a.bounds(),
        }
    }

    /// One candidate from the primitive boundaries, uniform by area, kept
    /// only if it lies on this solid's boundary. Normals point outward.
    fn try_sample(&self, rng: &mut ChaCha8Rng) -> Option<(Vec3, Vec3)> {
        match self {
            Shape::Sphere { center, radius } => {
                let n = loop {
                    let g: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    let l = norm(g);
                    if l > 1e-12 {
                        break scale(g, 1.0 / l);
                    }
                };
                Some(([0, 1, 2].map(|i| center[i] + radius * n[i]), n))
            }
            Shape::Box { center, half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let mut pick = rng.gen::<f64>() * (areas[0] + areas[1] + areas[2]);
                let mut axis = 2;
                for (i, &a) in areas.iter().enumerate() {
                    if pick < a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                let mut n = [0.0; 3];
                for i in 0..3 {
                    p[i] = if i == axis { sign * h[i] } else { rng.gen_range(-h[i]..=h[i]) };
                }
                n[axis] = sign;
                Some(([0, 1, 2].map(|i| center[i] + p[i]), n))
            }
            Shape::Torus { center, major, minor } => {
                // area element is proportional to major + minor cos v
                let v = loop {
                    let v = rng.gen_range(0.0..std::f64::consts::TAU);
                    if rng.gen::<f64>() * (major + minor) <= major + minor * v.cos() {
                        break v;
                    }
                };
                let u = rng.gen_range(0.0..std::f64::consts::TAU);
                let ring = major + minor * v.cos();
                let n = [v.cos() * u.cos(), v.cos() * u.sin(), v.sin()];
                let p = [ring * u.cos(), ring * u.sin(), minor * v.sin()];
                Some(([0, 1, 2].map(|i| center[i] + p[i]), n))
            }
            Shape::Union { a, b } => {
                let (first, other) = pick_child(rng, a, b);
                let (p, n) = first.try_sample(rng)?;
                (other.sdf(p) > 0.0).then_some((p, n))
            }
            Shape::Difference { a, b } => {
                if rng.gen::<f64>() * self.candidate_area() < a.candidate_area() {
                    let (p, n) = a.try_sample(rng)?;
                    (b.sdf(p) > 0.0).then_some((p, n))
                } else {
                    let (p, n) = b.try_sample(rng)?;
                    (a.sdf(p) < 0.0).then_some((p, scale(n, -1.0)))
                }
            }
        }
    }

    /// `n` area-uniform surface points with outward unit normals.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>), ShapeError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        let mut nrm = Vec::with_capacity(n);
        let max_attempts = 1000 * n.max(1);
        let mut attempts = 0;
        while pts.len() < n {
            attempts += 1;
            if attempts > max_attempts {
                return Err(ShapeError::Sampling {
                    wanted: n,
                    got: pts.len(),
                    attempts,
                });
            }
            if let Some((p, q)) = self.try_sample(&mut rng) {
                pts.push(p);
                nrm.push(q);
            }
        }
        Ok((pts, nrm))
    }
}

fn pick_child<'a>(rng: &mut ChaCha8Rng, a: &'a Shape, b: &'a Shape) -> (&'a Shape, &'a Shape) {
    let (wa, wb) = (a.candidate_area(), b.candidate_area());
    if rng.gen::<f64>() * (wa + wb) < wa {
        (a, b)
    } else {
        (b, a)
    }
}

/// Parses expressions such as `sphere:r=1`, `box(1)-sphere(0.6)` or
/// `torus(R=1, r=0.3, z=0.5) + sphere(0.5)`.
///
/// Primitives: `sphere(r)`, `box(h)` or `box(hx, hy, hz)` (half extents),
/// `torus(R, r)`. Named arguments `x`, `y`, `z` move the center. `+` is
/// union and `-` difference, left to right; parentheses group.
pub fn parse_shape(spec: &str) -> Result<Shape, ShapeError> {
    let mut p = Parser { s: spec.as_bytes(), i: 0 };
    let shape = p.expr()?;
    p.ws();
    if p.i != p.s.len() {
        return p.err("unexpected trailing input");
    }
    shape.validate()?;
    Ok(shape)
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn err<T>(&self, message: &str) -> Result<T, ShapeError> {
        Err(ShapeError::Parse {
            pos: self.i + 1,
            message: message.to_string(),
        })
    }

    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.i).copied()
    }

    fn expr(&mut self) -> Result<Shape, ShapeError> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.i += 1;
            let rhs = self.term()?;
            acc = if op == b'+' { Shape::union(acc, rhs) } else { Shape::difference(acc, rhs) };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Shape, ShapeError> {
        if self.peek() == Some(b'(') {
            self.i += 1;
            let e = self.expr()?;
            if self.peek() != Some(b')') {
                return self.err("expected ')'");
            }
            self.i += 1;
            return Ok(e);
        }
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i].is_ascii_alphabetic() {
            self.i += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.i]).unwrap().to_ascii_lowercase();
        if name.is_empty() {
            return self.err("expected a primitive name");
        }
        let args = match self.peek() {
            Some(b'(') => {
                self.i += 1;
                let a = self.args(Some(b')'))?;
                self.i += 1;
                a
            }
            Some(b':') => {
                self.i += 1;
                self.args(None)?
            }
            _ => Vec::new(),
        };
        self.primitive(&name, start, args)
    }

    /// Comma-separated `value` or `key=value` items up to `close` (or up to
    /// an operator/end when `close` is `None`).
    fn args(&mut self, close: Option<u8>) -> Result<Vec<(Option<String>, f64)>, ShapeError> {
        let mut out = Vec::new();
        loop {
            match (self.peek(), close) {
                (Some(c), Some(cl)) if c == cl => return Ok(out),
                (None, Some(_)) => return self.err("unterminated argument list"),
                (None, None) => return Ok(out),
                _ => {}
            }
            let key = {
                let save = self.i;
                let st = self.i;
                while self.i < self.s.len() && self.s[self.i].is_ascii_alphabetic() {
                    self.i += 1;
                }
                let k = std::str::from_utf8(&self.s[st..self.i]).unwrap().to_string();
                if !k.is_empty() && self.peek() == Some(b'=') {
                    self.i += 1;
                    Some(k)
                } else {
                    self.i = save;
                    None
                }
            };
            self.ws();
            let st = self.i;
            while self.i < self.s.len() && matches!(self.s[self.i], b'0'..=b'9' | b'.' | b'e' | b'E' | b'+' | b'-') {
                // a sign only starts a number or follows an exponent
                if matches!(self.s[self.i], b'+' | b'-') && self.i > st && !matches!(self.s[self.i - 1], b'e' | b'E') {
                    break;
                }
                self.i += 1;
            }
            let text = std::str::from_utf8(&self.s[st..self.i]).unwrap();
            let value: f64 = match text.parse() {
                Ok(v) => v,
                Err(_) => {
                    self.i = st;
                    return self.err(&format!("expected a number, found {text:?}"));
                }
            };
            out.push((key, value));
            match self.peek() {
                Some(b',') => self.i += 1,
                Some(c) if Some(c) == close => {}
                _ if close.is_none() => return Ok(out),
                _ => return self.err("expected ',' or ')'"),
            }
        }
    }

    fn primitive(&self, name: &str, at: usize, args: Vec<(Option<String>, f64)>) -> Result<Shape, ShapeError> {
        let fail = |m: String| Err(ShapeError::Parse { pos: at + 1, message: m });
        let (positional, names): (&[&str], &[&str]) = match name {
            "sphere" => (&["r"], &["r", "x", "y", "z"]),
            "box" | "cube" => (&["hx", "hy", "hz"], &["h", "hx", "hy", "hz", "x", "y", "z"]),
            "torus" => (&["R", "r"], &["R", "r", "x", "y", "z"]),
            _ => return fail(format!("unknown primitive {name:?}")),
        };
        let mut vals: Vec<(String, f64)> = Vec::new();
        let mut pos_i = 0;
        for (k, v) in args {
            let key = match k {
                Some(k) => {
                    if !names.contains(&k.as_str()) {
                        return fail(format!("{name} has no parameter {k:?}"));
                    }
                    k
                }
                None => {
                    let Some(&k) = positional.get(pos_i) else {
                        return fail(format!("too many arguments for {name}"));
                    };
                    pos_i += 1;
                    k.to_string()
                }
            };
            if vals.iter().any(|(n, _)| *n == key) {
                return fail(format!("parameter {key:?} given twice"));
            }
            vals.push((key, v));
        }
        let get = |k: &str| vals.iter().find(|(n, _)| n == k).map(|(_, v)| *v);
        let center = [get("x").unwrap_or(0.0), get("y").unwrap_or(0.0), get("z").unwrap_or(0.0)];
        Ok(match name {
            "sphere" => Shape::Sphere {
                center,
                radius: get("r").unwrap_or(1.0),
            },
            "torus" => Shape::Torus {
                center,
                major: get("R").unwrap_or(1.0),
                minor: get("r").unwrap_or(0.25),
            },
            _ => {
                let uniform = get("h");
                let hx = get("hx").or(uniform).unwrap_or(1.0);
                // a single positional value is a cube
                let hy = get("hy").or(uniform).unwrap_or(if pos_i == 1 { hx } else { 1.0 });
                let hz = get("hz").or(uniform).unwrap_or(if pos_i == 1 { hx } else { 1.0 });
                Shape::Box {
                    center,
                    half_extents: [hx, hy, hz],
                }
            }
        })
    }
}

/// Self-describing ground truth written next to synthetic clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDescriptor {
    pub version: u32,
    pub spec: String,
    pub shape: Shape,
    pub n_points: usize,
    pub sigma: f64,
    pub seed: u64,
}

pub const ORACLE_VERSION: u32 = 1;

impl OracleDescriptor {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let d: OracleDescriptor = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if d.version != ORACLE_VERSION {
            return Err(format!("unsupported oracle version {}", d.version));
        }
        d.shape.validate().map_err(|e| e.to_string())?;
        Ok(d)
    }
}
