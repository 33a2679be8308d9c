use thiserror::Error;

use super::backend::Backend;
use super::matrix::{Matrix, Real};
use super::ops;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{0}")]
    Invalid(String),
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

/// `y = x W + b` on plain matrices with full shape checking.
pub fn dense<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, NnError> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(shape_err("dense", format!("weight {:?} has an empty dimension", w.shape())));
    }
    if x.cols() != w.rows() {
        return Err(shape_err("dense", format!("input {:?} vs weight {:?}", x.shape(), w.shape())));
    }
    if b.shape() != (1, w.cols()) {
        return Err(shape_err("dense", format!("bias {:?} vs weight {:?}", b.shape(), w.shape())));
    }
    Ok(ops::dense(x, w, b))
}

/// Dense layer reading `{prefix}.w` and `{prefix}.b`.
pub fn linear<B: Backend>(b: &mut B, x: B::Var, prefix: &str) -> Result<B::Var, NnError> {
    let w = b.param(&format!("{prefix}.w"));
    let bias = b.param(&format!("{prefix}.b"));
    let (xs, ws) = (b.value(&x).shape(), b.value(&w).shape());
    if xs.1 != ws.0 {
        return Err(shape_err("dense", format!("{prefix}: input {xs:?} vs weight {ws:?}")));
    }
    let y = b.matmul(x, w);
    Ok(b.add_bias(y, bias))
}

/// `layers` dense layers `{prefix}.0 ..`, ReLU between them, last one linear.
pub fn mlp<B: Backend>(b: &mut B, x: B::Var, prefix: &str, layers: usize) -> Result<B::Var, NnError> {
    if layers == 0 {
        return Err(NnError::Invalid(format!("{prefix}: an MLP needs at least one layer")));
    }
    let mut h = x;
    for i in 0..layers {
        h = linear(b, h, &format!("{prefix}.{i}"))?;
        if i + 1 < layers {
            h = b.relu(h);
        }
    }
    Ok(h)
}

/// Attention pooling over consecutive blocks of `k` rows: per-channel
/// scores from the dense layer `{prefix}`, softmax over each block, then a
/// weighted sum of the block's rows.
pub fn attention_pool<B: Backend>(b: &mut B, feats: B::Var, k: usize, prefix: &str) -> Result<B::Var, NnError> {
    if k == 0 {
        return Err(NnError::Invalid("attention pooling over zero rows".into()));
    }
    let rows = b.value(&feats).rows();
    if rows % k != 0 {
        return Err(shape_err("attention_pool", format!("{rows} rows not a multiple of K = {k}")));
    }
    let scores = linear(b, feats.clone(), prefix)?;
    let w = b.softmax_groups(scores, k);
    let weighted = b.mul(w, feats);
    Ok(b.group_sum(weighted, k))
}
