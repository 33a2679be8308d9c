//! The full network: point encoder, tet aggregation and graph convolutions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::delaunay::Tetrahedralization;
use crate::geonet::{encode, init_encoder_params, EncoderConfig, EncoderPlan, GeoError, DEFAULT_CHUNK};
use crate::graphnet::{argmax_inside, gather_ids, init_graph_params, predict_labels, GraphConfig};
use crate::nn::{Backend, Eval, Matrix, ParameterStore, Real};
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub graph: GraphConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GeoError> {
        self.encoder.validate()?;
        self.graph.validate()
    }

    pub fn init_params(&self, seed: u64) -> Result<ParameterStore, GeoError> {
        self.validate()?;
        let mut store = ParameterStore::new(seed);
        let mut rng = ParameterStore::rng(seed);
        init_encoder_params(&mut store, &self.encoder, &mut rng)?;
        init_graph_params(&mut store, &self.graph, self.encoder.out_channels, &mut rng)?;
        Ok(store)
    }
}

/// Constant network inputs derived from one cloud and its tetrahedralization.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub plan: EncoderPlan,
    pub ids: Vec<i64>,
    pub adjacency: Arc<Vec<[u32; 4]>>,
}

impl GraphInputs {
    pub fn build(
        cloud: &PointCloud,
        tets: &Tetrahedralization,
        cfg: &EncoderConfig,
        seed: u64,
    ) -> Result<Self, GeoError> {
        if tets.points().len() != cloud.len() {
            return Err(GeoError::PlanMismatch {
                points: tets.points().len(),
                expected: cloud.len(),
            });
        }
        Ok(GraphInputs {
            plan: EncoderPlan::build(cloud, cfg, seed)?,
            ids: gather_ids(tets.tets(), cloud.len())?,
            adjacency: Arc::new(tets.neighbors().to_vec()),
        })
    }

    pub fn num_tets(&self) -> usize {
        self.adjacency.len()
    }
}

/// Label probabilities (`N × 2`, inside first) on any backend.
pub fn forward<B: Backend>(b: &mut B, cfg: &ModelConfig, inputs: &GraphInputs, chunk: usize) -> Result<B::Var, GeoError> {
    let feats = encode(b, &inputs.plan, chunk)?;
    predict_labels(b, feats, &inputs.ids, &inputs.adjacency, &cfg.graph, chunk.saturating_mul(4))
}

/// Inference without gradients in precision `T`, evaluated in blocks.
pub fn infer<T: Real>(cfg: &ModelConfig, params: &ParameterStore, inputs: &GraphInputs) -> Result<Matrix<T>, GeoError> {
    let mut e = Eval::<T>::new(params);
    let out = forward(&mut e, cfg, inputs, DEFAULT_CHUNK)?;
    Ok(Arc::try_unwrap(out).unwrap_or_else(|a| (*a).clone()))
}

/// Hard per-tet labels (`true` = inside).
pub fn infer_labels<T: Real>(cfg: &ModelConfig, params: &ParameterStore, inputs: &GraphInputs) -> Result<Vec<bool>, GeoError> {
    Ok(argmax_inside(&infer::<T>(cfg, params, inputs)?))
}
