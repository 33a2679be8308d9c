//! Oriented point clouds: storage, PLY I/O, exact KNN, noise and subsampling.

mod kdtree;
mod normals;
pub mod ply;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{normalize, Vec3};
pub use kdtree::KdTree;
pub use normals::{estimate_normals, NormalEstimate};
use ply::{PlyError, PlyFormat};

/// Default neighborhood size used across the pipeline.
pub const DEFAULT_K: usize = 16;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("PLY has no 'vertex' element with x, y, z properties")]
    MissingCoordinates,
    #[error("incomplete normal properties: need all of nx, ny, nz (missing {0})")]
    IncompleteNormals(&'static str),
    #[error("positions ({positions}) and normals ({normals}) differ in length")]
    LengthMismatch { positions: usize, normals: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("point {0} has a zero-length normal")]
    ZeroNormal(usize),
    #[error("point {0} has a normal that is not unit length")]
    NonUnitNormal(usize),
    #[error("cloud is empty")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Points with unit normals. Positions are pairwise distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl PointCloud {
    /// Normalizes the normals and drops bitwise-duplicate positions (first
    /// occurrence wins). Use [`PointCloud::from_raw`] to learn how many were
    /// dropped.
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self, CloudError> {
        Self::from_raw(positions, normals).map(|(c, _)| c)
    }

    /// Like [`PointCloud::new`], also returning the number of duplicates removed.
    pub fn from_raw(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<(Self, usize), CloudError> {
        if positions.len() != normals.len() {
            return Err(CloudError::LengthMismatch {
                positions: positions.len(),
                normals: normals.len(),
            });
        }
        let input_len = positions.len();
        let mut seen: HashSet<[u64; 3]> = HashSet::with_capacity(positions.len());
        let mut out_p = Vec::with_capacity(positions.len());
        let mut out_n = Vec::with_capacity(positions.len());
        for (i, (p, n)) in positions.into_iter().zip(normals).enumerate() {
            if p.iter().chain(n.iter()).any(|c| !c.is_finite()) {
                return Err(CloudError::NonFinite(i));
            }
            // +0.0 folds -0.0 onto 0.0 so the bitwise test matches geometry.
            let p = [p[0] + 0.0, p[1] + 0.0, p[2] + 0.0];
            let n = normalize(n).ok_or(CloudError::ZeroNormal(i))?;
            if seen.insert([p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]) {
                out_p.push(p);
                out_n.push(n);
            }
        }
        let dups = input_len - out_p.len();
        let cloud = PointCloud {
            positions: out_p,
            normals: out_n,
        };
        if dups > 0 {
            log::warn!("removed {dups} duplicate points");
        }
        Ok((cloud, dups))
    }

    pub fn empty() -> Self {
        PointCloud {
            positions: Vec::new(),
            normals: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<Vec3>) {
        (self.positions, self.normals)
    }

    /// Selects rows by index (in the given order).
    pub fn select(&self, ids: &[usize]) -> PointCloud {
        PointCloud {
            positions: ids.iter().map(|&i| self.positions[i]).collect(),
            normals: ids.iter().map(|&i| self.normals[i]).collect(),
        }
    }

    /// Rounds positions to float32 precision (and re-deduplicates), so the
    /// cloud survives a float32 file round-trip exactly.
    pub fn quantized_f32(&self) -> PointCloud {
        let positions = self.positions.iter().map(|&p| crate::geom::quantize_f32(p)).collect();
        PointCloud::new(positions, self.normals.clone()).expect("quantizing keeps values finite")
    }
}

impl PointCloud {
    /// Rounds positions and normals to float32 without renormalizing, for
    /// storage formats that keep float32 normals. Fails if rounding merges
    /// two points.
    pub fn rounded_f32(&self) -> Result<PointCloud, CloudError> {
        Self::from_stored(
            self.positions.iter().map(|&p| crate::geom::quantize_f32(p)).collect(),
            self.normals.iter().map(|&n| crate::geom::quantize_f32(n)).collect(),
        )
    }

    /// Rebuilds a cloud from stored arrays, keeping normals bit-exact.
    /// Normals must already be unit length within 1e-6 and positions distinct.
    pub fn from_stored(positions: Vec<Vec3>, normals: Vec<Vec3>) -> Result<PointCloud, CloudError> {
        if positions.len() != normals.len() {
            return Err(CloudError::LengthMismatch {
                positions: positions.len(),
                normals: normals.len(),
            });
        }
        let mut seen: HashSet<[u64; 3]> = HashSet::with_capacity(positions.len());
        for (i, (p, n)) in positions.iter().zip(&normals).enumerate() {
            if p.iter().chain(n.iter()).any(|c| !c.is_finite()) {
                return Err(CloudError::NonFinite(i));
            }
            if (crate::geom::norm(*n) - 1.0).abs() > 1e-6 {
                return Err(CloudError::NonUnitNormal(i));
            }
            if !seen.insert(p.map(f64::to_bits)) {
                return Err(CloudError::InvalidArgument(format!("point {i} duplicates an earlier point")));
            }
        }
        Ok(PointCloud { positions, normals })
    }
}

/// Result of [`load_ply`].
#[derive(Debug, Clone)]
pub struct LoadedCloud {
    pub cloud: PointCloud,
    /// The file carried no normals; `cloud` holds +z placeholders and the
    /// caller should run [`estimate_normals`].
    pub needs_estimation: bool,
    pub duplicates_removed: usize,
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<LoadedCloud, CloudError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CloudError::File {
        path: path.display().to_string(),
        source,
    })?;
    parse_ply_cloud(&bytes)
}

pub fn parse_ply_cloud(bytes: &[u8]) -> Result<LoadedCloud, CloudError> {
    let data = ply::read_ply(bytes)?;
    let vertex = data.element("vertex").ok_or(CloudError::MissingCoordinates)?;
    let (Some(x), Some(y), Some(z)) = (vertex.scalar("x"), vertex.scalar("y"), vertex.scalar("z")) else {
        return Err(CloudError::MissingCoordinates);
    };
    let positions: Vec<Vec3> = (0..vertex.count).map(|i| [x[i], y[i], z[i]]).collect();
    let present = ["nx", "ny", "nz"].map(|n| vertex.scalar(n));
    let (normals, needs_estimation) = match present {
        [Some(nx), Some(ny), Some(nz)] => ((0..vertex.count).map(|i| [nx[i], ny[i], nz[i]]).collect(), false),
        [None, None, None] => (vec![[0.0, 0.0, 1.0]; vertex.count], true),
        _ => {
            let missing = ["nx", "ny", "nz"]
                .into_iter()
                .zip(present)
                .find(|(_, p)| p.is_none())
                .map(|(n, _)| n)
                .unwrap();
            return Err(CloudError::IncompleteNormals(missing));
        }
    };
    let (cloud, duplicates_removed) = PointCloud::from_raw(positions, normals)?;
    Ok(LoadedCloud {
        cloud,
        needs_estimation,
        duplicates_removed,
    })
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    let path = path.as_ref();
    let file_err = |source| CloudError::File {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(file_err)?;
    ply::write_ply(
        std::io::BufWriter::new(file),
        format,
        cloud.positions(),
        Some(cloud.normals()),
        None,
    )
    .map_err(file_err)
}

/// Exact KNN over a cloud's positions with a fixed default `k`.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    tree: KdTree,
    k: usize,
}

impl KnnIndex {
    pub fn build(positions: &[Vec3], k: usize) -> Result<Self, CloudError> {
        if k == 0 {
            return Err(CloudError::InvalidArgument("K must be positive".into()));
        }
        Ok(KnnIndex {
            tree: KdTree::build(positions),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// `k` nearest other points to point `i`, nearest first, ties to the lower index.
    pub fn query(&self, i: usize, k: usize) -> Result<Vec<usize>, CloudError> {
        let n = self.tree.len();
        if i >= n {
            return Err(CloudError::InvalidArgument(format!("point id {i} out of range (n = {n})")));
        }
        if k >= n {
            return Err(CloudError::InvalidArgument(format!("K = {k} must be below the point count {n}")));
        }
        Ok(self
            .tree
            .nearest_k(self.tree.points()[i], k, Some(i))
            .into_iter()
            .map(|(j, _)| j)
            .collect())
    }

    /// Neighbor table for every point with the index's own `k`, flattened
    /// row-major (`n × k`).
    pub fn all_neighbors(&self) -> Result<Vec<u32>, CloudError> {
        let n = self.tree.len();
        let k = self.k;
        if k >= n {
            return Err(CloudError::InvalidArgument(format!("K = {k} must be below the point count {n}")));
        }
        let rows: Vec<Vec<u32>> = (0..n)
            .into_par_iter()
            .map(|i| {
                self.tree
                    .nearest_k(self.tree.points()[i], k, Some(i))
                    .into_iter()
                    .map(|(j, _)| j as u32)
                    .collect()
            })
            .collect();
        Ok(rows.concat())
    }
}

/// Perturbs every coordinate with independent `N(0, sigma²)` noise; normals
/// are kept as they are.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud, CloudError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(CloudError::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let positions = cloud
        .positions()
        .iter()
        .map(|p| [p[0] + normal.sample(&mut rng), p[1] + normal.sample(&mut rng), p[2] + normal.sample(&mut rng)])
        .collect();
    PointCloud::new(positions, cloud.normals().to_vec())
}

/// Uniform sample of `m` points without replacement; the kept points stay in
/// their original relative order.
pub fn random_subsample(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud, CloudError> {
    let n = cloud.len();
    if m > n {
        return Err(CloudError::InvalidArgument(format!("cannot keep {m} of {n} points")));
    }
    if m == 0 {
        log::warn!("random_subsample with m = 0 yields an empty cloud");
        return Ok(PointCloud::empty());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = sample(&mut rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(cloud.select(&ids))
}
