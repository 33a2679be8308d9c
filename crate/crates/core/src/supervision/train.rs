use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{loss_on_tape, LossError, LossWeights};
use super::sample::TrainingSample;
use super::sub_seed;
use crate::geonet::GeoError;
use crate::graphnet::argmax_inside;
use crate::model::{forward, infer, GraphInputs, ModelConfig};
use crate::nn::{Adam, AdamConfig, Backend, Matrix, ParamError, ParameterStore, Real, Tape};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    Empty,
    #[error("non-finite loss at step {step} on sample {sample}; first non-finite value produced by {op}")]
    NonFinite { step: usize, sample: String, op: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Validation every this many steps; 0 means once per pass over the samples.
    pub eval_every: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            eval_every: 0,
            lambda1: 0.9,
            lambda2: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub sample: usize,
    pub loss: f64,
    pub multi_label: f64,
    pub neighbor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalLog {
    pub step: usize,
    pub accuracy: f64,
    pub per_sample: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (the initialization
    /// when no validation ran).
    pub best: ParameterStore,
    pub last: ParameterStore,
    pub best_accuracy: Option<f64>,
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalLog>,
}

/// A sample with its network inputs prepared.
pub struct PreparedSample<'a> {
    pub sample: &'a TrainingSample,
    pub inputs: GraphInputs,
}

pub fn prepare<'a>(samples: &'a [TrainingSample], cfg: &ModelConfig, seed: u64) -> Result<Vec<PreparedSample<'a>>, GeoError> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(PreparedSample {
                sample: s,
                inputs: GraphInputs::build(&s.cloud, &s.tets, &cfg.encoder, sub_seed(seed, 100 + i as u64))?,
            })
        })
        .collect()
}

/// Fraction of finite tets whose predicted label equals the majority of
/// their reference labels.
pub fn tet_accuracy<T: Real>(probs: &Matrix<T>, sample: &TrainingSample) -> f64 {
    let pred = argmax_inside(probs);
    let (mut hit, mut total) = (0usize, 0usize);
    for (t, &p) in pred.iter().enumerate() {
        if sample.tets.is_infinite(t) {
            continue;
        }
        total += 1;
        hit += usize::from(p == sample.labels.majority(t));
    }
    if total == 0 {
        return 0.0;
    }
    hit as f64 / total as f64
}

pub fn evaluate(cfg: &ModelConfig, params: &ParameterStore, set: &[PreparedSample]) -> Result<Vec<f64>, TrainError> {
    set.iter()
        .map(|p| Ok(tet_accuracy(&infer::<f32>(cfg, params, &p.inputs)?, p.sample)))
        .collect()
}

/// Adam on `λ1 L_m + λ2 L_n`, one shape per step, visiting the shapes in a
/// seeded shuffled order each pass. Validation accuracy is measured on
/// `validation` (or the training shapes when it is empty).
pub fn train(
    samples: &[TrainingSample],
    validation: &[TrainingSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: ParameterStore,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Empty);
    }
    let weights = LossWeights {
        multi_label: cfg.lambda1,
        neighbor: cfg.lambda2,
    };
    let train_set = prepare(samples, model, seed)?;
    let val_set = if validation.is_empty() {
        None
    } else {
        Some(prepare(validation, model, sub_seed(seed, 7))?)
    };
    let val = val_set.as_deref().unwrap_or(&train_set);
    let eval_every = if cfg.eval_every == 0 { samples.len() } else { cfg.eval_every };

    let mut params = init;
    let mut adam = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 8));
    let mut order: Vec<usize> = Vec::new();
    let mut out = TrainOutcome {
        best: params.clone(),
        last: params.clone(),
        best_accuracy: None,
        steps: Vec::with_capacity(cfg.steps),
        evals: Vec::new(),
    };
    let started = Instant::now();
    for step in 0..cfg.steps {
        if order.is_empty() {
            order = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let idx = order.pop().unwrap();
        let prepared = &train_set[idx];
        let (log, grads) = {
            let mut tape = Tape::<f64>::new(&params);
            let probs = forward(&mut tape, model, &prepared.inputs, usize::MAX)?;
            let (total, lm, ln) = loss_on_tape(&mut tape, probs, &prepared.sample.labels, &prepared.inputs.adjacency, weights)?;
            let loss = tape.value(&total).get(0, 0);
            if !loss.is_finite() {
                return Err(non_finite(step, prepared, model, &params));
            }
            let log = StepLog {
                step,
                sample: idx,
                loss,
                multi_label: tape.value(&lm).get(0, 0),
                neighbor: tape.value(&ln).get(0, 0),
            };
            (log, tape.backward(total).for_store(&params))
        };
        adam.step(&mut params, &grads)?;
        log::debug!("step {step} sample {idx} loss {:.6}", log.loss);
        out.steps.push(log);
        if (step + 1) % eval_every == 0 || step + 1 == cfg.steps {
            let per_sample = evaluate(model, &params, val)?;
            let accuracy = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
            log::info!(
                "step {} loss {:.5} validation accuracy {:.4} ({:.1}s)",
                step + 1,
                log.loss,
                accuracy,
                started.elapsed().as_secs_f64()
            );
            if out.best_accuracy.is_none_or(|b| accuracy > b) {
                out.best_accuracy = Some(accuracy);
                out.best = params.clone();
            }
            out.evals.push(EvalLog {
                step: step + 1,
                accuracy,
                per_sample,
            });
        }
    }
    out.last = params;
    Ok(out)
}

/// Replays the failing step in checked mode to name the first operation
/// that produced a non-finite value.
fn non_finite(step: usize, p: &PreparedSample, model: &ModelConfig, params: &ParameterStore) -> TrainError {
    let mut tape = Tape::<f64>::new(params);
    tape.set_checked(true);
    let op = match forward(&mut tape, model, &p.inputs, usize::MAX) {
        Ok(probs) => {
            let _ = loss_on_tape(&mut tape, probs, &p.sample.labels, &p.inputs.adjacency, LossWeights::default());
            tape.first_non_finite()
                .map_or_else(|| "loss".to_string(), |(i, op)| format!("{op} (node {i})"))
        }
        Err(e) => e.to_string(),
    };
    TrainError::NonFinite {
        step,
        sample: p.sample.id().to_string(),
        op,
    }
}

pub fn write_loss_csv<W: Write>(steps: &[StepLog], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,sample,loss,multi_label,neighbor")?;
    for s in steps {
        writeln!(w, "{},{},{},{},{}", s.step, s.sample, s.loss, s.multi_label, s.neighbor)?;
    }
    Ok(())
}
