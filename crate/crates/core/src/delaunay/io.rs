//! `DTET` debug dump: magic, u32 version, u64 vertex count, f64 xyz per
//! vertex, u64 tet count, then per tet 4 vertex ids (-1 for the infinite
//! vertex) followed by 4 neighbor ids, all i64. Little-endian throughout.

use std::io::{Read, Write};

use thiserror::Error;

use super::{Tetrahedralization, INFINITE};

const MAGIC: &[u8; 4] = b"DTET";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TetsIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a DTET file")]
    BadMagic,
    #[error("unsupported DTET version {0}")]
    Version(u32),
    #[error("id {value} out of range in tet {tet}")]
    BadId { tet: usize, value: i64 },
}

pub fn write_tets<W: Write>(mut w: W, t: &Tetrahedralization) -> Result<(), TetsIoError> {
    let mut buf = Vec::with_capacity(16 + t.points().len() * 24 + t.num_tets() * 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.points().len() as u64).to_le_bytes());
    for p in t.points() {
        for c in p {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    buf.extend_from_slice(&(t.num_tets() as u64).to_le_bytes());
    for (tet, nb) in t.tets().iter().zip(t.neighbors()) {
        for &v in tet {
            let v = if v == INFINITE { -1i64 } else { v as i64 };
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &o in nb {
            buf.extend_from_slice(&(o as i64).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tets<R: Read>(mut r: R) -> Result<Tetrahedralization, TetsIoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TetsIoError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TetsIoError::Version(version));
    }
    let nv = read_u64(&mut r)? as usize;
    let mut points = Vec::with_capacity(nv.min(1 << 24));
    for _ in 0..nv {
        points.push([read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?]);
    }
    let nt = read_u64(&mut r)? as usize;
    let mut tets = Vec::with_capacity(nt.min(1 << 24));
    let mut neighbors = Vec::with_capacity(nt.min(1 << 24));
    for i in 0..nt {
        let mut tet = [0u32; 4];
        for v in &mut tet {
            let x = read_i64(&mut r)?;
            *v = match x {
                -1 => INFINITE,
                x if x >= 0 && (x as u64) < nv as u64 => x as u32,
                value => return Err(TetsIoError::BadId { tet: i, value }),
            };
        }
        let mut nb = [0u32; 4];
        for o in &mut nb {
            let x = read_i64(&mut r)?;
            if x < 0 || x as u64 >= nt as u64 {
                return Err(TetsIoError::BadId { tet: i, value: x });
            }
            *o = x as u32;
        }
        tets.push(tet);
        neighbors.push(nb);
    }
    Ok(Tetrahedralization::from_raw_parts(points, tets, neighbors))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64<R: Read>(r: &mut R) -> std::io::Result<i64> {
    Ok(read_u64(r)? as i64)
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::build_delaunay_points;

    #[test]
    fn round_trip() {
        let pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.3, 0.2, 0.25],
            [0.9, 0.8, 0.7],
        ];
        let t = build_delaunay_points(&pts, 5).unwrap();
        let mut buf = Vec::new();
        write_tets(&mut buf, &t).unwrap();
        let back = read_tets(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert!(matches!(read_tets(&b"XXXX"[..]), Err(TetsIoError::BadMagic)));
    }
}
