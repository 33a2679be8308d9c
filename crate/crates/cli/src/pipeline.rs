//! The inference pipeline with per-stage wall-clock timing.

use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use deepdt::delaunay::build_delaunay;
use deepdt::geonet::{encode, EncoderPlan, DEFAULT_CHUNK};
use deepdt::graphnet::{argmax_inside, gather_ids, predict_labels};
use deepdt::model::ModelConfig;
use deepdt::nn::{Backend, Eval, ParameterStore};
use deepdt::pointcloud::PointCloud;
use deepdt::supervision::sub_seed;
use deepdt::surface::{extract_surface, laplacian_smooth, watertight_check, TriangleMesh};
use serde::Serialize;

use crate::config::ReconstructConfig;

/// Records consecutive stages; each stage ends when the next begins.
#[derive(Debug, Clone)]
pub struct StageTimer {
    start: Instant,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl StageTimer {
    pub fn start() -> Self {
        let now = Instant::now();
        StageTimer {
            start: now,
            last: now,
            stages: Vec::new(),
        }
    }

    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push((name.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }

    pub fn stages(&self) -> &[(String, f64)] {
        &self.stages
    }

    pub fn total(&self) -> f64 {
        self.last.duration_since(self.start).as_secs_f64()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructReport {
    pub points: usize,
    pub tetrahedra: usize,
    pub finite_tetrahedra: usize,
    pub inside_tetrahedra: usize,
    pub vertices: usize,
    pub triangles: usize,
    pub watertight: bool,
    pub euler: i64,
    pub stages: Vec<Stage>,
    pub total_seconds: f64,
}

impl ReconstructReport {
    pub fn set_timings(&mut self, t: &StageTimer) {
        self.stages = t
            .stages()
            .iter()
            .map(|(name, seconds)| Stage {
                name: name.clone(),
                seconds: *seconds,
            })
            .collect();
        self.total_seconds = t.total();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            s.push_str(&format!("{:<12} {:>10.3} s\n", st.name, st.seconds));
        }
        s.push_str(&format!("{:<12} {:>10.3} s\n", "total", self.total_seconds));
        s.push_str(&format!(
            "points {}, tetrahedra {} ({} finite, {} inside), mesh {} vertices {} triangles, watertight {}, euler {}\n",
            self.points,
            self.tetrahedra,
            self.finite_tetrahedra,
            self.inside_tetrahedra,
            self.vertices,
            self.triangles,
            self.watertight,
            self.euler
        ));
        s
    }
}

pub struct Reconstruction {
    pub mesh: TriangleMesh,
    /// Per-tet labels, `true` = inside.
    pub labels: Vec<bool>,
    pub report: ReconstructReport,
}

/// Delaunay, features, labels, surface and optional smoothing for a cloud
/// with normals. Stages are recorded on `timer`.
pub fn reconstruct_cloud(
    cloud: PointCloud,
    model: &ModelConfig,
    params: &ParameterStore,
    rc: &ReconstructConfig,
    smooth: bool,
    seed: u64,
    timer: &mut StageTimer,
) -> Result<Reconstruction> {
    let tets = build_delaunay(&cloud, sub_seed(seed, 3))?;
    timer.stage("delaunay");
    let plan = EncoderPlan::build(&cloud, &model.encoder, sub_seed(seed, 6))?;
    let ids = gather_ids(tets.tets(), cloud.len())?;
    let adjacency = Arc::new(tets.neighbors().to_vec());
    timer.stage("knn");
    let mut e = Eval::<f32>::new(params);
    let feats = encode(&mut e, &plan, DEFAULT_CHUNK)?;
    drop(plan);
    timer.stage("features");
    let probs = predict_labels(&mut e, feats, &ids, &adjacency, &model.graph, DEFAULT_CHUNK * 4)?;
    let labels = argmax_inside(e.value(&probs));
    drop(probs);
    timer.stage("predict");
    let mut mesh = extract_surface(&tets, &labels);
    timer.stage("extract");
    if smooth && rc.smooth_iterations > 0 && !mesh.is_empty() {
        mesh = laplacian_smooth(&mesh, rc.smooth_iterations, rc.smooth_lambda);
        timer.stage("smooth");
    }
    let topo = watertight_check(&mesh);
    let report = ReconstructReport {
        points: cloud.len(),
        tetrahedra: tets.num_tets(),
        finite_tetrahedra: tets.num_finite(),
        inside_tetrahedra: labels.iter().filter(|&&l| l).count(),
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        watertight: topo.is_watertight(),
        euler: topo.euler,
        stages: Vec::new(),
        total_seconds: 0.0,
    };
    timer.stage("topology");
    Ok(Reconstruction { mesh, labels, report })
}
