//! Per-point geometry encoder: local surface descriptors from signed
//! distances and relative normals, attention-pooled feature extraction
//! layers, random downsampling between layers and nearest-kept-point
//! propagation back to every input point.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{dot, norm, scale, sub, Vec3};
use crate::nn::{attention_pool, mlp, Backend, Matrix, NnError, ParamError, ParameterStore, Real};
use crate::pointcloud::{CloudError, KdTree, KnnIndex, PointCloud};

/// Width of one local surface input row: `d`, `v`, `h`.
pub const LOCAL_INPUT_DIM: usize = 7;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("normal {0:?} is not unit length")]
    NonUnitNormal(Vec3),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("level {level} keeps {points} points, need more than K = {k}")]
    TooFewPoints { level: usize, points: usize, k: usize },
    #[error("cloud has {points} points, plan expects {expected}")]
    PlanMismatch { points: usize, expected: usize },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSurfaceInput {
    pub d: f64,
    pub v: Vec3,
    pub h: Vec3,
}

impl LocalSurfaceInput {
    pub fn to_row(&self) -> [f64; LOCAL_INPUT_DIM] {
        [self.d, self.v[0], self.v[1], self.v[2], self.h[0], self.h[1], self.h[2]]
    }
}

/// Distance from `p` to the tangent plane through `q` with unit normal `n`,
/// positive on the side `n` points to.
pub fn signed_distance(p: Vec3, q: Vec3, n: Vec3) -> f64 {
    dot(sub(p, q), n)
}

pub fn signed_distance_checked(p: Vec3, q: Vec3, n: Vec3) -> Result<f64, GeoError> {
    check_unit(n)?;
    Ok(signed_distance(p, q, n))
}

fn check_unit(n: Vec3) -> Result<(), GeoError> {
    if (norm(n) - 1.0).abs() > UNIT_TOL {
        return Err(GeoError::NonUnitNormal(n));
    }
    Ok(())
}

/// Splits `n_i` into the part along `n_k` and the remainder in the plane
/// orthogonal to `n_k`.
pub fn relative_normals(n_i: Vec3, n_k: Vec3) -> (Vec3, Vec3) {
    let v = scale(n_k, dot(n_i, n_k));
    (v, sub(n_i, v))
}

pub fn local_surface_input(p_i: Vec3, n_i: Vec3, p_k: Vec3, n_k: Vec3) -> LocalSurfaceInput {
    let (v, h) = relative_normals(n_i, n_k);
    LocalSurfaceInput {
        d: signed_distance(p_i, p_k, n_k),
        v,
        h,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub k: usize,
    /// Output channels of each level.
    pub channels: Vec<usize>,
    /// Fraction of the previous level's points each level runs on.
    pub keep_ratios: Vec<f64>,
    pub out_channels: usize,
    /// Divide signed distances by the level's mean neighbor distance so the
    /// inputs do not depend on the sampling density or the unit of length.
    pub normalize_distances: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            k: 16,
            channels: vec![32, 64, 128],
            keep_ratios: vec![1.0, 0.25, 0.25],
            out_channels: 64,
            normalize_distances: true,
        }
    }
}

impl EncoderConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let bad = |m: String| Err(GeoError::Config(m));
        if self.k == 0 {
            return bad("K must be positive".into());
        }
        if self.channels.is_empty() {
            return bad("at least one level is required".into());
        }
        if self.channels.len() != self.keep_ratios.len() {
            return bad(format!(
                "{} channel entries but {} keep ratios",
                self.channels.len(),
                self.keep_ratios.len()
            ));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0) {
            return bad(format!("channel count {c} must be positive"));
        }
        if let Some(r) = self.keep_ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return bad(format!("keep ratio {r} outside (0, 1]"));
        }
        if self.out_channels == 0 {
            return bad("out_channels must be positive".into());
        }
        Ok(())
    }

    /// Width fed to the attention pool of level `l`.
    pub fn pooled_width(&self, l: usize) -> usize {
        self.channels[l] + if l == 0 { 0 } else { self.channels[l - 1] }
    }

    pub fn fused_width(&self) -> usize {
        self.channels.iter().sum()
    }
}

/// Adds the encoder's parameters (`enc.*`) to `store`.
pub fn init_encoder_params(store: &mut ParameterStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<(), GeoError> {
    cfg.validate()?;
    for l in 0..cfg.levels() {
        let c = cfg.channels[l];
        let w = cfg.pooled_width(l);
        store.add_mlp(&format!("enc.{l}.surf"), &[LOCAL_INPUT_DIM, c, c], rng)?;
        store.add_dense(&format!("enc.{l}.att"), w, w, rng)?;
        store.add_mlp(&format!("enc.{l}.post"), &[w, c, c], rng)?;
    }
    store.add_mlp("enc.fuse", &[cfg.fused_width(), cfg.out_channels, cfg.out_channels], rng)?;
    Ok(())
}

/// Fixed, non-differentiable inputs of one level.
#[derive(Debug, Clone)]
pub struct LevelPlan {
    /// Original point ids this level runs on, ascending.
    pub active: Vec<u32>,
    /// `active.len() · K` rows of local surface inputs, neighbors of one
    /// reference point in consecutive rows.
    pub inputs: Matrix<f64>,
    /// Row of each active point in the previous level's output.
    pub prev_rows: Option<Vec<i64>>,
    /// Row of this level's output nearest to each original point.
    pub up: Vec<i64>,
}

/// Everything the encoder needs besides parameters; built once per cloud.
#[derive(Debug, Clone)]
pub struct EncoderPlan {
    pub n: usize,
    pub k: usize,
    pub levels: Vec<LevelPlan>,
}

impl EncoderPlan {
    pub fn build(cloud: &PointCloud, cfg: &EncoderConfig, seed: u64) -> Result<Self, GeoError> {
        cfg.validate()?;
        let n = cloud.len();
        let k = cfg.k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut levels: Vec<LevelPlan> = Vec::with_capacity(cfg.levels());
        let mut prev: Vec<u32> = (0..n as u32).collect();
        for (l, &ratio) in cfg.keep_ratios.iter().enumerate() {
            let m = if ratio == 1.0 {
                prev.len()
            } else {
                (ratio * prev.len() as f64).round() as usize
            };
            if m <= k {
                return Err(GeoError::TooFewPoints { level: l, points: m, k });
            }
            let (active, prev_rows) = if m == prev.len() {
                (prev.clone(), (0..m as i64).collect::<Vec<_>>())
            } else {
                let mut pos = sample(&mut rng, prev.len(), m).into_vec();
                pos.sort_unstable();
                (pos.iter().map(|&p| prev[p]).collect(), pos.iter().map(|&p| p as i64).collect())
            };
            let inputs = level_inputs(cloud, &active, k, cfg.normalize_distances)?;
            let up = nearest_rows(cloud, &active);
            levels.push(LevelPlan {
                prev_rows: (l > 0).then_some(prev_rows),
                active: active.clone(),
                inputs,
                up,
            });
            prev = active;
        }
        Ok(EncoderPlan { n, k, levels })
    }
}

fn level_inputs(cloud: &PointCloud, active: &[u32], k: usize, normalize: bool) -> Result<Matrix<f64>, GeoError> {
    let pos: Vec<Vec3> = active.iter().map(|&i| cloud.positions()[i as usize]).collect();
    let knn = KnnIndex::build(&pos, k)?.all_neighbors()?;
    let (p, nrm) = (cloud.positions(), cloud.normals());
    let inv_scale = if normalize {
        let total: f64 = knn
            .chunks(k)
            .enumerate()
            .map(|(r, nbs)| nbs.iter().map(|&nb| norm(sub(pos[r], pos[nb as usize]))).sum::<f64>())
            .sum();
        let mean = total / knn.len() as f64;
        if mean > 0.0 { 1.0 / mean } else { 1.0 }
    } else {
        1.0
    };
    let mut data = vec![0.0; active.len() * k * LOCAL_INPUT_DIM];
    data.par_chunks_mut(k * LOCAL_INPUT_DIM).enumerate().for_each(|(r, out)| {
        let i = active[r] as usize;
        for (slot, &nb) in knn[r * k..(r + 1) * k].iter().enumerate() {
            let j = active[nb as usize] as usize;
            let mut input = local_surface_input(p[i], nrm[i], p[j], nrm[j]);
            input.d *= inv_scale;
            let row = input.to_row();
            out[slot * LOCAL_INPUT_DIM..(slot + 1) * LOCAL_INPUT_DIM].copy_from_slice(&row);
        }
    });
    Ok(Matrix::from_vec(active.len() * k, LOCAL_INPUT_DIM, data))
}

fn nearest_rows(cloud: &PointCloud, active: &[u32]) -> Vec<i64> {
    if active.len() == cloud.len() {
        return (0..active.len() as i64).collect();
    }
    let tree = KdTree::build(&active.iter().map(|&i| cloud.positions()[i as usize]).collect::<Vec<_>>());
    cloud
        .positions()
        .par_iter()
        .map(|&q| tree.nearest(q).expect("nonempty level").0 as i64)
        .collect()
}

fn chunks(total: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    let size = size.max(1);
    (0..total.div_ceil(size).max(1)).map(move |c| (c * size, ((c + 1) * size).min(total)))
}

/// Runs `f` over row ranges and stacks the results; a single range passes
/// the variable through untouched so it stays on a recording tape.
pub(crate) fn chunked<B: Backend>(
    b: &mut B,
    total: usize,
    size: usize,
    mut f: impl FnMut(&mut B, usize, usize) -> Result<B::Var, GeoError>,
) -> Result<B::Var, GeoError> {
    let ranges: Vec<(usize, usize)> = chunks(total, size).collect();
    if ranges.len() == 1 {
        return f(b, ranges[0].0, ranges[0].1);
    }
    let mut parts: Vec<Matrix<B::T>> = Vec::with_capacity(ranges.len());
    for (lo, hi) in ranges {
        let v = f(b, lo, hi)?;
        parts.push(b.value(&v).clone());
    }
    Ok(b.constant(Matrix::vstack(&parts)))
}

/// The per-neighbor MLP applied to rows of `d ⊕ v ⊕ h`.
pub fn encode_surface_feature<B: Backend>(b: &mut B, inputs: B::Var, level: usize) -> Result<B::Var, GeoError> {
    let w = b.value(&inputs).cols();
    if w != LOCAL_INPUT_DIM {
        return Err(NnError::Shape {
            op: "encode_surface_feature",
            detail: format!("input width {w}, expected {LOCAL_INPUT_DIM}"),
        }
        .into());
    }
    Ok(mlp(b, inputs, &format!("enc.{level}.surf"), 2)?)
}

/// One extraction layer for a block of reference points. `inputs` holds `K`
/// local rows per reference point; `prev` is the previous level's full
/// output together with each reference point's row in it.
pub fn feature_extraction_layer<B: Backend>(
    b: &mut B,
    level: usize,
    k: usize,
    inputs: Matrix<B::T>,
    prev: Option<(B::Var, &[i64])>,
) -> Result<B::Var, GeoError> {
    if k == 0 || inputs.rows() % k != 0 {
        return Err(NnError::Shape {
            op: "feature_extraction_layer",
            detail: format!("{} input rows not a multiple of K = {k}", inputs.rows()),
        }
        .into());
    }
    let m = inputs.rows() / k;
    let x = b.constant(inputs);
    let s = encode_surface_feature(b, x, level)?;
    let pooled_in = match prev {
        None => s,
        Some((f, rows)) => {
            if rows.len() != m {
                return Err(NnError::Shape {
                    op: "feature_extraction_layer",
                    detail: format!("{} previous rows for {m} reference points", rows.len()),
                }
                .into());
            }
            let ids: Vec<i64> = rows.iter().flat_map(|&r| std::iter::repeat_n(r, k)).collect();
            let g = b.gather_rows(f, &Arc::new(ids));
            b.concat_cols(vec![s, g])
        }
    };
    let pooled = attention_pool(b, pooled_in, k, &format!("enc.{level}.att"))?;
    Ok(mlp(b, pooled, &format!("enc.{level}.post"), 2)?)
}

/// Per-point features for every original point, `n × out_channels`.
/// `chunk` bounds the number of reference points processed at once.
pub fn encode<B: Backend>(b: &mut B, plan: &EncoderPlan, chunk: usize) -> Result<B::Var, GeoError> {
    let k = plan.k;
    let mut outs: Vec<B::Var> = Vec::with_capacity(plan.levels.len());
    for (l, lp) in plan.levels.iter().enumerate() {
        let prev = outs.last().cloned();
        let f = chunked(b, lp.active.len(), chunk, |b, lo, hi| {
            let inputs = lp.inputs.slice_rows(lo * k, hi * k).cast::<B::T>();
            let p = match (&prev, &lp.prev_rows) {
                (Some(v), Some(rows)) => Some((v.clone(), &rows[lo..hi])),
                _ => None,
            };
            feature_extraction_layer(b, l, k, inputs, p)
        })?;
        outs.push(f);
    }
    chunked(b, plan.n, chunk, |b, lo, hi| {
        let mut parts = Vec::with_capacity(outs.len());
        for (lp, f) in plan.levels.iter().zip(&outs) {
            let ids = &lp.up[lo..hi];
            if lo == 0 && hi == plan.n && lp.active.len() == plan.n {
                parts.push(f.clone());
            } else {
                parts.push(b.gather_rows(f.clone(), &Arc::new(ids.to_vec())));
            }
        }
        let x = b.concat_cols(parts);
        Ok(mlp(b, x, "enc.fuse", 2)?)
    })
}

/// Builds the plan and evaluates the encoder without gradients.
pub fn encode_point_features<T: Real>(
    cloud: &PointCloud,
    cfg: &EncoderConfig,
    params: &ParameterStore,
    seed: u64,
) -> Result<Matrix<T>, GeoError> {
    let plan = EncoderPlan::build(cloud, cfg, seed)?;
    let mut e = crate::nn::Eval::<T>::new(params);
    let out = encode(&mut e, &plan, DEFAULT_CHUNK)?;
    Ok(Arc::try_unwrap(out).unwrap_or_else(|a| (*a).clone()))
}

/// Reference points per evaluation block during inference.
pub const DEFAULT_CHUNK: usize = 8192;
