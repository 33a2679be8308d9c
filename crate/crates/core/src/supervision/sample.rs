//! Prepared training samples and their `DTSM` file format.
//!
//! Layout (little endian): `DTSM`, version `u32`, point count `u64`, tet
//! count `u64`, `N_ref` `u32`, positions and normals as `f32` triples, tets
//! and adjacency as `u32` quadruples (`u32::MAX` for the infinite vertex),
//! the validity mask and the labels bit-packed (LSB first), a `u32`-length
//! UTF-8 block of `key=value` lines, and finally the SHA-256 of everything
//! before it.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::labels::{label_tetrahedra, sample_reference_locations, InsideOracle, LabelError, ReferenceLabels};
use super::sub_seed;
use crate::delaunay::{build_delaunay, DelaunayError, TetGraph, Tetrahedralization, INFINITE};
use crate::pointcloud::{add_gaussian_noise, CloudError, KnnIndex, PointCloud};

const MAGIC: &[u8; 4] = b"DTSM";
pub const DTSM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a DTSM file")]
    BadMagic,
    #[error("unsupported DTSM version {0}")]
    Version(u32),
    #[error("checksum mismatch: file is corrupt")]
    Checksum,
    #[error("malformed DTSM: {0}")]
    Malformed(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Delaunay(#[from] DelaunayError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub cloud: PointCloud,
    pub tets: Tetrahedralization,
    pub labels: ReferenceLabels,
    pub meta: BTreeMap<String, String>,
}

impl TrainingSample {
    pub fn graph(&self) -> TetGraph {
        self.tets.graph()
    }

    pub fn knn(&self, k: usize) -> Result<KnnIndex, CloudError> {
        KnnIndex::build(self.cloud.positions(), k)
    }

    pub fn id(&self) -> &str {
        self.meta.get("shape").map_or("?", String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.cloud.len();
        let nt = self.tets.num_tets();
        let mut b = Vec::with_capacity(64 + n * 24 + nt * 32);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&DTSM_VERSION.to_le_bytes());
        b.extend_from_slice(&(n as u64).to_le_bytes());
        b.extend_from_slice(&(nt as u64).to_le_bytes());
        b.extend_from_slice(&(self.labels.n_ref() as u32).to_le_bytes());
        for arr in [self.cloud.positions(), self.cloud.normals()] {
            for p in arr {
                for c in p {
                    b.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
        }
        for arr in [self.tets.tets(), self.tets.neighbors()] {
            for q in arr {
                for v in q {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        pack_bits(&mut b, self.labels.valid());
        pack_bits(&mut b, self.labels.labels());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        b.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        b.extend_from_slice(meta.as_bytes());
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), SampleError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, SampleError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SampleError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(SampleError::BadMagic);
        }
        if bytes.len() < 4 + 4 + 8 + 8 + 4 + 4 + 32 {
            return Err(SampleError::Malformed("truncated header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(SampleError::Checksum);
        }
        let mut c = Cursor { b: body, i: 4 };
        let version = c.u32()?;
        if version != DTSM_VERSION {
            return Err(SampleError::Version(version));
        }
        let n = c.u64()? as usize;
        let nt = c.u64()? as usize;
        let n_ref = c.u32()? as usize;
        let read_vecs = |c: &mut Cursor| -> Result<Vec<[f64; 3]>, SampleError> {
            (0..n).map(|_| Ok([c.f32()? as f64, c.f32()? as f64, c.f32()? as f64])).collect()
        };
        let positions = read_vecs(&mut c)?;
        let normals = read_vecs(&mut c)?;
        let quads = |c: &mut Cursor| -> Result<Vec<[u32; 4]>, SampleError> {
            (0..nt).map(|_| Ok([c.u32()?, c.u32()?, c.u32()?, c.u32()?])).collect()
        };
        let tets = quads(&mut c)?;
        let neighbors = quads(&mut c)?;
        for q in &tets {
            if q.iter().any(|&v| v != INFINITE && v as usize >= n) {
                return Err(SampleError::Malformed(format!("tet {q:?} references a missing point")));
            }
        }
        for q in &neighbors {
            if q.iter().any(|&v| v as usize >= nt) {
                return Err(SampleError::Malformed(format!("neighbor entry {q:?} out of range")));
            }
        }
        let valid = c.bits(nt)?;
        let labels = c.bits(nt * n_ref)?;
        let mlen = c.u32()? as usize;
        let meta_text = std::str::from_utf8(c.take(mlen)?)
            .map_err(|_| SampleError::Malformed("metadata is not UTF-8".into()))?;
        if c.i != body.len() {
            return Err(SampleError::Malformed("trailing bytes".into()));
        }
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SampleError::Malformed(format!("metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let cloud = PointCloud::from_stored(positions, normals)?;
        let tets = Tetrahedralization::from_raw_parts(cloud.positions().to_vec(), tets, neighbors);
        Ok(TrainingSample {
            cloud,
            tets,
            labels: ReferenceLabels::new(n_ref, labels, valid)?,
            meta,
        })
    }
}

fn pack_bits(out: &mut Vec<u8>, bits: &[bool]) {
    for chunk in bits.chunks(8) {
        out.push(chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)));
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    i: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SampleError> {
        if self.b.len() - self.i < n {
            return Err(SampleError::Malformed("unexpected end of data".into()));
        }
        let s = &self.b[self.i..self.i + n];
        self.i += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SampleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SampleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, SampleError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bits(&mut self, n: usize) -> Result<Vec<bool>, SampleError> {
        let bytes = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

/// Surface samples of the oracle, Gaussian noise, Delaunay, reference
/// locations and their labels, assembled into one sample. Coordinates are
/// rounded to `f32` first so the sample survives a `DTSM` round trip.
pub fn build_training_sample(
    oracle: &InsideOracle,
    shape_id: &str,
    n_points: usize,
    sigma: f64,
    n_ref: usize,
    seed: u64,
) -> Result<TrainingSample, SampleError> {
    let cloud = synthesize_cloud(oracle, n_points, sigma, seed)?;
    let mut sample = label_cloud(cloud, oracle, shape_id, n_ref, seed)?;
    sample.meta.insert("sigma".to_string(), sigma.to_string());
    Ok(sample)
}

/// Noisy surface samples of the oracle, rounded to `f32`.
pub fn synthesize_cloud(oracle: &InsideOracle, n_points: usize, sigma: f64, seed: u64) -> Result<PointCloud, SampleError> {
    let (p, n) = oracle.sample_surface(n_points, sub_seed(seed, 1))?;
    let clean = PointCloud::new(p, n)?;
    let noisy = add_gaussian_noise(&clean, sigma, sub_seed(seed, 2))?;
    Ok(noisy.quantized_f32().rounded_f32()?)
}

/// Delaunay, reference locations and labels for an existing cloud.
pub fn label_cloud(
    cloud: PointCloud,
    oracle: &InsideOracle,
    shape_id: &str,
    n_ref: usize,
    seed: u64,
) -> Result<TrainingSample, SampleError> {
    let cloud = cloud.rounded_f32()?;
    let tets = build_delaunay(&cloud, sub_seed(seed, 3))?;
    let locations = sample_reference_locations(&tets, n_ref, sub_seed(seed, 4))?;
    let labels = label_tetrahedra(&tets, &locations, n_ref, oracle, sub_seed(seed, 5))?;
    let mut meta = BTreeMap::new();
    meta.insert("shape".to_string(), shape_id.to_string());
    meta.insert("n_points".to_string(), cloud.len().to_string());
    meta.insert("n_ref".to_string(), n_ref.to_string());
    meta.insert("seed".to_string(), seed.to_string());
    Ok(TrainingSample {
        cloud,
        tets,
        labels,
        meta,
    })
}
