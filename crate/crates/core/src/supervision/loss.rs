use std::sync::Arc;

use thiserror::Error;

use super::labels::ReferenceLabels;
use crate::graphnet::INSIDE;
use crate::nn::{binary_cross_entropy, Matrix, TVar, Tape, PROB_EPS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LossError {
    #[error("{what}: {got} rows, expected {expected}")]
    Misaligned { what: &'static str, got: usize, expected: usize },
    #[error("loss weights must be non-negative")]
    NegativeWeight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub multi_label: f64,
    pub neighbor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            multi_label: 0.9,
            neighbor: 0.1,
        }
    }
}

fn check_rows(what: &'static str, got: usize, expected: usize) -> Result<(), LossError> {
    if got != expected {
        return Err(LossError::Misaligned { what, got, expected });
    }
    Ok(())
}

/// Mean binary cross-entropy of every reference label against the tet's
/// inside probability.
pub fn multi_label_loss(probs: &Matrix<f64>, labels: &ReferenceLabels) -> Result<f64, LossError> {
    check_rows("probabilities vs labels", probs.rows(), labels.num_tets())?;
    let mut sum = 0.0;
    for t in 0..labels.num_tets() {
        if !labels.valid()[t] {
            continue;
        }
        let p = probs.get(t, INSIDE);
        for &l in labels.of(t) {
            sum += binary_cross_entropy(p, l);
        }
    }
    Ok(sum / (labels.num_tets() * labels.n_ref()) as f64)
}

/// Mean over the `4N` directed neighbor pairs of
/// `-Σ_c p_i(c) ln p_j(c)`, the neighbor's probability clamped.
pub fn neighbor_consistency_loss(probs: &Matrix<f64>, adjacency: &[[u32; 4]]) -> Result<f64, LossError> {
    check_rows("probabilities vs graph", probs.rows(), adjacency.len())?;
    let mut sum = 0.0;
    for (i, nb) in adjacency.iter().enumerate() {
        for &j in nb {
            for c in 0..probs.cols() {
                let q = probs.get(j as usize, c).clamp(PROB_EPS, 1.0 - PROB_EPS);
                sum -= probs.get(i, c) * q.ln();
            }
        }
    }
    Ok(sum / (4 * adjacency.len()) as f64)
}

pub fn total_loss(multi_label: f64, neighbor: f64, w: LossWeights) -> Result<f64, LossError> {
    if w.multi_label < 0.0 || w.neighbor < 0.0 {
        return Err(LossError::NegativeWeight);
    }
    Ok(w.multi_label * multi_label + w.neighbor * neighbor)
}

/// Loss nodes recorded on a tape: `(total, multi-label, neighbor)`.
pub fn loss_on_tape(
    tape: &mut Tape<'_, f64>,
    probs: TVar,
    labels: &ReferenceLabels,
    adjacency: &Arc<Vec<[u32; 4]>>,
    w: LossWeights,
) -> Result<(TVar, TVar, TVar), LossError> {
    use crate::nn::Backend;
    let rows = tape.value(&probs).rows();
    check_rows("probabilities vs labels", rows, labels.num_tets())?;
    check_rows("probabilities vs graph", rows, adjacency.len())?;
    if w.multi_label < 0.0 || w.neighbor < 0.0 {
        return Err(LossError::NegativeWeight);
    }
    let (pos, neg) = labels.counts();
    let lm = tape.multi_label_bce(probs, Arc::new(pos), Arc::new(neg), (rows * labels.n_ref()) as f64);
    let ln = tape.neighbor_cross_entropy(probs, adjacency.clone(), (4 * rows) as f64);
    let a = tape.scale(lm, w.multi_label);
    let b = tape.scale(ln, w.neighbor);
    let total = tape.add(a, b);
    Ok((total, lm, ln))
}
