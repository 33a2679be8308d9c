//! The run configuration file (TOML). Every section is optional; missing
//! keys take the defaults below.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepdt::metrics::PointsMode;
use deepdt::model::ModelConfig;
use deepdt::supervision::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub reconstruct: ReconstructConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_points: usize,
    /// Standard deviation of the Gaussian noise added to synthetic samples.
    pub sigma: f64,
    /// Reference locations per tetrahedron.
    pub n_ref: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_points: 2000,
            sigma: 0.01,
            n_ref: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub smooth_iterations: usize,
    pub smooth_lambda: f64,
    /// Neighbors used when a cloud arrives without normals.
    pub normal_k: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            smooth_iterations: 2,
            smooth_lambda: 0.5,
            normal_k: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mesh_samples: usize,
    /// Samples drawn from analytic or mesh references.
    pub reference_samples: usize,
    pub points_mode: PointsMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mesh_samples: deepdt::metrics::DEFAULT_MESH_SAMPLES,
            reference_samples: 10_000,
            points_mode: PointsMode::Sampled,
        }
    }
}

/// Defaults for paths that can also be given on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub samples: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("config {}", path.display()))?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.samples, &mut cfg.paths.validation, &mut cfg.paths.checkpoint]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.lambda1 < 0.0 || self.train.lambda2 < 0.0 {
            bail!("loss weights lambda1 and lambda2 must be non-negative");
        }
        if self.data.n_ref == 0 {
            bail!("n_ref must be at least 1");
        }
        if !(self.data.sigma >= 0.0 && self.data.sigma.is_finite()) {
            bail!("sigma must be a non-negative number");
        }
        if self.data.n_points == 0 {
            bail!("n_points must be positive");
        }
        if !(self.reconstruct.smooth_lambda > 0.0 && self.reconstruct.smooth_lambda <= 1.0) {
            bail!("smooth_lambda must lie in (0, 1]");
        }
        if !(self.train.adam.lr >= 0.0 && self.train.adam.lr.is_finite()) {
            bail!("learning rate must be a non-negative number");
        }
        self.model.validate()?;
        Ok(())
    }

    /// Fails if a configured input path does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for (name, p) in [("samples", &self.paths.samples), ("validation", &self.paths.validation)] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("paths.{name}: {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }
}
