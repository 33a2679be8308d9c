//! Subcommand implementations behind the `deepdt` binary.

pub mod config;
pub mod pipeline;

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepdt::delaunay::{build_delaunay, validate_delaunay};
use deepdt::metrics::{mesh_points, EvalReport, Oriented, PointsMode};
use deepdt::nn::ParameterStore;
use deepdt::pointcloud::ply::PlyFormat;
use deepdt::pointcloud::{estimate_normals, load_ply, save_ply, PointCloud};
use deepdt::supervision::shapes::ORACLE_VERSION;
use deepdt::supervision::{
    label_cloud, parse_shape, sub_seed, synthesize_cloud, train, write_loss_csv, InsideOracle, OracleDescriptor,
    TrainError, TrainingSample,
};
use deepdt::surface::{load_mesh, save_mesh, MeshFormat, TriangleMesh};

pub use config::RunConfig;
pub use pipeline::{reconstruct_cloud, Reconstruction, ReconstructReport, StageTimer};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

/// A check the user asked for did not pass.
#[derive(Debug)]
pub struct ValidationFailure(pub String);

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

/// Process exit code for an error: validation failures 4, numeric failures
/// 3, everything else (bad input, I/O) 2.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ValidationFailure>().is_some() {
            return EXIT_VALIDATION;
        }
        if let Some(TrainError::NonFinite { .. }) = cause.downcast_ref::<TrainError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_INPUT
}

/// Loads a cloud, estimating normals when the file has none.
pub fn read_cloud(path: &Path, normal_k: usize) -> Result<PointCloud> {
    let loaded = load_ply(path).with_context(|| format!("reading {}", path.display()))?;
    if loaded.duplicates_removed > 0 {
        log::warn!("{}: dropped {} duplicate points", path.display(), loaded.duplicates_removed);
    }
    if loaded.needs_estimation {
        log::info!("{}: no normals, estimating with K = {normal_k}", path.display());
        let est = estimate_normals(&loaded.cloud, normal_k)?;
        return Ok(est.cloud);
    }
    Ok(loaded.cloud)
}

pub fn oracle_path_for(cloud: &Path) -> PathBuf {
    cloud.with_extension("oracle.json")
}

pub struct SynthArgs<'a> {
    pub shape: &'a str,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub out: &'a Path,
    pub oracle: Option<&'a Path>,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let shape = parse_shape(a.shape)?;
    let oracle = InsideOracle::Analytic(shape.clone());
    let cloud = synthesize_cloud(&oracle, a.n, a.sigma, a.seed)?;
    save_ply(&cloud, a.out, PlyFormat::BinaryLittleEndian).with_context(|| format!("writing {}", a.out.display()))?;
    let desc = OracleDescriptor {
        version: ORACLE_VERSION,
        spec: a.shape.to_string(),
        shape,
        n_points: a.n,
        sigma: a.sigma,
        seed: a.seed,
    };
    let oracle_path = a.oracle.map_or_else(|| oracle_path_for(a.out), Path::to_path_buf);
    std::fs::write(&oracle_path, desc.to_json()).with_context(|| format!("writing {}", oracle_path.display()))?;
    println!("wrote {} points to {} and oracle {}", cloud.len(), a.out.display(), oracle_path.display());
    Ok(())
}

pub fn read_oracle(path: &Path) -> Result<(InsideOracle, String)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let desc = OracleDescriptor::from_json(&text).map_err(anyhow::Error::msg).with_context(|| format!("oracle {}", path.display()))?;
    Ok((InsideOracle::Analytic(desc.shape), desc.spec))
}

pub struct PrepareArgs<'a> {
    pub cloud: &'a Path,
    pub oracle: Option<&'a Path>,
    pub mesh_oracle: Option<&'a Path>,
    pub n_ref: usize,
    pub seed: u64,
    pub out: &'a Path,
    pub normal_k: usize,
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<TrainingSample> {
    let cloud = read_cloud(a.cloud, a.normal_k)?;
    let (oracle, id) = match (a.oracle, a.mesh_oracle) {
        (Some(_), Some(_)) => bail!("give either --oracle or --mesh-oracle, not both"),
        (Some(p), None) => read_oracle(p)?,
        (None, Some(p)) => {
            let mesh = load_mesh(p).with_context(|| format!("reading {}", p.display()))?;
            (InsideOracle::Mesh(mesh), p.display().to_string())
        }
        (None, None) => {
            let p = oracle_path_for(a.cloud);
            if !p.exists() {
                bail!("no oracle given and {} does not exist", p.display());
            }
            read_oracle(&p)?
        }
    };
    let sample = label_cloud(cloud, &oracle, &id, a.n_ref, a.seed)?;
    let file = File::create(a.out).with_context(|| format!("writing {}", a.out.display()))?;
    sample.save(BufWriter::new(file))?;
    let finite = sample.tets.num_finite();
    let inside = (0..sample.tets.num_tets()).filter(|&t| sample.labels.majority(t)).count();
    let mixed = (0..sample.tets.num_tets())
        .filter(|&t| {
            let c = sample.labels.inside_count(t);
            c > 0 && c < sample.labels.n_ref()
        })
        .count();
    println!(
        "{}: {} points, {} tetrahedra ({} finite), {:.1}% inside by majority, {:.1}% with mixed labels",
        a.out.display(),
        sample.cloud.len(),
        sample.tets.num_tets(),
        finite,
        100.0 * inside as f64 / sample.tets.num_tets() as f64,
        100.0 * mixed as f64 / sample.tets.num_tets() as f64,
    );
    Ok(sample)
}

/// All `.dtsm` files of a directory in file name order.
pub fn read_samples(dir: &Path) -> Result<Vec<TrainingSample>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "dtsm"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            TrainingSample::load(std::io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

pub fn save_checkpoint(params: &ParameterStore, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    params.save(BufWriter::new(f))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ParameterStore::load(std::io::BufReader::new(f)).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// Config stored next to a checkpoint by `train`.
pub fn sidecar_config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("config.toml")
}

pub struct TrainArgs<'a> {
    pub samples: &'a Path,
    pub validation: Option<&'a Path>,
    pub out: &'a Path,
    pub loss_log: Option<&'a Path>,
}

pub fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let samples = read_samples(a.samples)?;
    if samples.is_empty() {
        bail!("no .dtsm samples in {}", a.samples.display());
    }
    let validation = match a.validation {
        Some(d) => read_samples(d)?,
        None => Vec::new(),
    };
    log::info!("training on {} samples, validating on {}", samples.len(), validation.len());
    let init = cfg.model.init_params(cfg.seed)?;
    let out = train(&samples, &validation, &cfg.model, &cfg.train, init, cfg.seed)?;
    save_checkpoint(&out.best, a.out)?;
    std::fs::write(sidecar_config_path(a.out), cfg.to_toml())?;
    let log_path = a.loss_log.map_or_else(|| a.out.with_extension("loss.csv"), Path::to_path_buf);
    write_loss_csv(&out.steps, BufWriter::new(File::create(&log_path)?))?;
    match out.best_accuracy {
        Some(acc) => println!("{} steps, best validation tet accuracy {:.4}", out.steps.len(), acc),
        None => println!("{} steps", out.steps.len()),
    }
    println!("checkpoint {}, loss log {}", a.out.display(), log_path.display());
    Ok(())
}

pub struct ReconstructArgs<'a> {
    pub cloud: &'a Path,
    pub checkpoint: &'a Path,
    pub out: &'a Path,
    pub smooth: bool,
    pub report: Option<&'a Path>,
}

pub fn cmd_reconstruct(cfg: &RunConfig, a: &ReconstructArgs) -> Result<ReconstructReport> {
    let format = MeshFormat::from_path(a.out)?;
    let mut timer = StageTimer::start();
    let params = load_checkpoint(a.checkpoint)?;
    cfg.model
        .init_params(0)?
        .check_compatible(&params)
        .context("checkpoint does not match the model configuration")?;
    let loaded = load_ply(a.cloud).with_context(|| format!("reading {}", a.cloud.display()))?;
    timer.stage("load");
    let cloud = if loaded.needs_estimation {
        let c = estimate_normals(&loaded.cloud, cfg.reconstruct.normal_k)?.cloud;
        timer.stage("normals");
        c
    } else {
        loaded.cloud
    };
    let mut rec = reconstruct_cloud(cloud, &cfg.model, &params, &cfg.reconstruct, a.smooth, cfg.seed, &mut timer)?;
    save_mesh(&rec.mesh, a.out, format).with_context(|| format!("writing {}", a.out.display()))?;
    timer.stage("save");
    rec.report.set_timings(&timer);
    print!("{}", rec.report.table());
    if let Some(p) = a.report {
        std::fs::write(p, rec.report.to_json())?;
    }
    Ok(rec.report)
}

/// Reference geometry for evaluation.
pub enum Reference {
    Samples { points: Vec<[f64; 3]>, normals: Vec<[f64; 3]> },
    Mesh(TriangleMesh),
}

pub fn read_reference(path: &Path, samples: usize, seed: u64) -> Result<Reference> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "json" => {
            let (oracle, _) = read_oracle(path)?;
            let (points, normals) = oracle.sample_surface(samples, seed)?;
            Ok(Reference::Samples { points, normals })
        }
        "obj" => Ok(Reference::Mesh(load_mesh(path)?)),
        "ply" => {
            let mesh = load_mesh(path)?;
            if !mesh.triangles.is_empty() {
                return Ok(Reference::Mesh(mesh));
            }
            let loaded = load_ply(path)?;
            if loaded.needs_estimation {
                bail!("{}: reference cloud has no normals", path.display());
            }
            let (points, normals) = loaded.cloud.into_parts();
            Ok(Reference::Samples { points, normals })
        }
        _ => bail!("{}: reference must be .json (oracle), .ply or .obj", path.display()),
    }
}

pub fn evaluate_mesh(mesh: &TriangleMesh, reference: &Reference, mode: PointsMode, samples: usize, seed: u64) -> Result<EvalReport> {
    let (p, n) = mesh_points(mesh, mode, samples, sub_seed(seed, 11), "reconstruction")?;
    let (rp, rn) = match reference {
        Reference::Samples { points, normals } => (points.clone(), normals.clone()),
        Reference::Mesh(m) => mesh_points(m, mode, samples, sub_seed(seed, 12), "reference")?,
    };
    Ok(EvalReport::compute(Oriented::new(&p, &n), Oriented::new(&rp, &rn), mode)?)
}

pub struct EvalArgs<'a> {
    pub mesh: &'a Path,
    pub reference: &'a Path,
    pub modes: Vec<PointsMode>,
    pub json_out: Option<&'a Path>,
    pub max_chamfer: Option<f64>,
    pub min_nc: Option<f64>,
}

pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<Vec<EvalReport>> {
    let mesh = load_mesh(a.mesh).with_context(|| format!("reading {}", a.mesh.display()))?;
    if mesh.is_empty() {
        bail!("{}: mesh has no triangles", a.mesh.display());
    }
    let reference = read_reference(a.reference, cfg.eval.reference_samples, cfg.seed)?;
    let mut reports = Vec::new();
    let mut lines = String::new();
    for &mode in &a.modes {
        let r = evaluate_mesh(&mesh, &reference, mode, cfg.eval.mesh_samples, cfg.seed)?;
        println!("{}", r.to_json());
        print!("{}", r.table());
        lines.push_str(&r.to_json());
        lines.push('\n');
        reports.push(r);
    }
    if let Some(p) = a.json_out {
        std::fs::write(p, lines)?;
    }
    for r in &reports {
        if let Some(m) = a.max_chamfer {
            if r.chamfer_l1 > m {
                return Err(ValidationFailure(format!("Chamfer-L1 {:.6} exceeds {m} ({} points)", r.chamfer_l1, r.points_mode)).into());
            }
        }
        if let Some(m) = a.min_nc {
            if r.normal_consistency < m {
                return Err(ValidationFailure(format!(
                    "normal consistency {:.6} below {m} ({} points)",
                    r.normal_consistency, r.points_mode
                ))
                .into());
            }
        }
    }
    Ok(reports)
}

pub fn cmd_check_delaunay(cfg: &RunConfig, cloud: &Path) -> Result<()> {
    let cloud = read_cloud(cloud, cfg.reconstruct.normal_k)?;
    let t = build_delaunay(&cloud, sub_seed(cfg.seed, 3))?;
    let report = validate_delaunay(&t);
    println!(
        "{} points, {} finite and {} infinite tetrahedra, {} insphere tests, {} violations",
        cloud.len(),
        report.finite_tets,
        report.infinite_tets,
        report.insphere_tests,
        report.violations.len()
    );
    for v in report.violations.iter().take(20) {
        println!("  {v:?}");
    }
    if !report.is_valid() {
        return Err(ValidationFailure(format!("{} Delaunay violations", report.violations.len())).into());
    }
    Ok(())
}
