//! Point-to-tetrahedron feature aggregation with channel-wise attention and
//! the graph convolution stack that labels tetrahedra inside or outside.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delaunay::INFINITE;
use crate::geonet::{chunked, GeoError};
use crate::nn::{linear, mlp, Backend, Matrix, NnError, ParameterStore, Real};

/// Column of the inside probability in a label-probability matrix.
pub const INSIDE: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Hidden widths of the graph convolution stack; the output layer has
    /// two channels.
    pub hidden: Vec<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { hidden: vec![128, 64] }
    }
}

impl GraphConfig {
    pub fn widths(&self, in_channels: usize) -> Vec<usize> {
        let mut w = vec![in_channels];
        w.extend(&self.hidden);
        w.push(2);
        w
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if self.hidden.contains(&0) {
            return Err(GeoError::Config("graph hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Adds `agg.*` (the per-vertex weight MLP) and `gcn.*` to `store`.
pub fn init_graph_params(
    store: &mut ParameterStore,
    cfg: &GraphConfig,
    in_channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), GeoError> {
    cfg.validate()?;
    store.add_mlp("agg", &[in_channels, in_channels, in_channels], rng)?;
    let w = cfg.widths(in_channels);
    for (i, pair) in w.windows(2).enumerate() {
        store.add_dense(&format!("gcn.{i}"), pair[0], pair[1], rng)?;
    }
    Ok(())
}

/// Tet vertex ids flattened to gather ids, infinite vertex as `-1`.
pub fn gather_ids(tets: &[[u32; 4]], n_points: usize) -> Result<Vec<i64>, GeoError> {
    let mut out = Vec::with_capacity(tets.len() * 4);
    for (t, tet) in tets.iter().enumerate() {
        for &v in tet {
            if v == INFINITE {
                out.push(-1);
            } else if (v as usize) < n_points {
                out.push(v as i64);
            } else {
                return Err(GeoError::Nn(NnError::Invalid(format!(
                    "tet {t} references vertex {v} but there are {n_points} points"
                ))));
            }
        }
    }
    Ok(out)
}

/// `T_i = Σ_j W_ij ⊙ F_ij` over the four vertex rows of each tet, with
/// `W_i` a softmax over the four rows of the weight MLP output.
pub fn aggregate_tet_features<B: Backend>(
    b: &mut B,
    point_feats: B::Var,
    ids: &[i64],
    chunk: usize,
) -> Result<B::Var, GeoError> {
    if !ids.len().is_multiple_of(4) {
        return Err(NnError::Shape {
            op: "aggregate_tet_features",
            detail: format!("{} vertex ids is not a multiple of 4", ids.len()),
        }
        .into());
    }
    let n = b.value(&point_feats).rows();
    if let Some(&bad) = ids.iter().find(|&&i| i < -1 || i >= n as i64) {
        return Err(NnError::Invalid(format!("vertex id {bad} out of range for {n} points")).into());
    }
    chunked(b, ids.len() / 4, chunk, |b, lo, hi| {
        let f = b.gather_rows(point_feats.clone(), &Arc::new(ids[lo * 4..hi * 4].to_vec()));
        let scores = mlp(b, f.clone(), "agg", 2)?;
        let w = b.softmax_groups(scores, 4);
        let weighted = b.mul(w, f);
        Ok(b.group_sum(weighted, 4))
    })
}

/// One graph convolution `Â x W + b`, ReLU unless `last`. Propagation runs
/// on whichever side of the product is narrower.
pub fn gcn_layer<B: Backend>(
    b: &mut B,
    x: B::Var,
    adj: &Arc<Vec<[u32; 4]>>,
    prefix: &str,
    last: bool,
) -> Result<B::Var, GeoError> {
    let rows = b.value(&x).rows();
    if rows != adj.len() {
        return Err(NnError::Shape {
            op: "gcn_layer",
            detail: format!("{rows} feature rows for {} graph nodes", adj.len()),
        }
        .into());
    }
    let w = b.param(&format!("{prefix}.w"));
    let (cin, cout) = b.value(&w).shape();
    let y = if cin <= cout {
        let px = b.propagate(x, adj);
        linear(b, px, prefix)?
    } else {
        let xw = b.matmul(x, w);
        let p = b.propagate(xw, adj);
        let bias = b.param(&format!("{prefix}.b"));
        b.add_bias(p, bias)
    };
    Ok(if last { y } else { b.relu(y) })
}

/// Per-tet `(inside, outside)` probabilities.
pub fn predict_labels<B: Backend>(
    b: &mut B,
    point_feats: B::Var,
    ids: &[i64],
    adj: &Arc<Vec<[u32; 4]>>,
    cfg: &GraphConfig,
    chunk: usize,
) -> Result<B::Var, GeoError> {
    let mut x = aggregate_tet_features(b, point_feats, ids, chunk)?;
    let layers = cfg.hidden.len() + 1;
    for i in 0..layers {
        x = gcn_layer(b, x, adj, &format!("gcn.{i}"), i + 1 == layers)?;
    }
    Ok(b.softmax_rows(x))
}

/// Hard labels from probabilities; an exact tie counts as outside.
pub fn argmax_inside<T: Real>(probs: &Matrix<T>) -> Vec<bool> {
    (0..probs.rows())
        .map(|r| probs.get(r, INSIDE) > probs.get(r, 1 - INSIDE))
        .collect()
}
