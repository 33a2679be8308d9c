use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepdt::supervision::TrainError;
use deepdt::surface::load_mesh;
use deepdt_cli::config::RunConfig;
use deepdt_cli::{exit_code, load_checkpoint, ValidationFailure, EXIT_INPUT, EXIT_NUMERIC, EXIT_VALIDATION};
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 3

[data]
n_points = 400

[model.encoder]
k = 6
channels = [8, 8]
keep_ratios = [1.0, 0.5]
out_channels = 8

[model.graph]
hidden = [8, 8]

[train]
steps = 6

[eval]
mesh_samples = 4000
reference_samples = 2000
"#;

fn deepdt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepdt")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = deepdt(args);
    assert!(
        out.status.success(),
        "deepdt {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    deepdt(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Config, two prepared samples and a cloud to reconstruct.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
        std::fs::create_dir(dir.path().join("samples")).unwrap();
        let w = Workspace { dir };
        for (i, shape) in ["sphere(1)", "box(0.8)"].iter().enumerate() {
            let cloud = w.path(&format!("c{i}.ply"));
            ok(&["--config", s(&w.cfg()), "--seed", &i.to_string(), "synth", "--shape", shape, "-o", s(&cloud)]);
            let out = w.path(&format!("samples/s{i}.dtsm"));
            ok(&["--config", s(&w.cfg()), "prepare", "--cloud", s(&cloud), "-o", s(&out)]);
        }
        ok(&["--config", s(&w.cfg()), "--seed", "9", "synth", "--shape", "sphere(0.9)", "-o", s(&w.path("test.ply"))]);
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> PathBuf {
        self.path("run.toml")
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let ckpt = self.path(out);
        let cfg = self.cfg();
        let samples = self.path("samples");
        let mut args = vec!["--config", s(&cfg), "--threads", "1", "train", "--samples", s(&samples), "-o", s(&ckpt)];
        args.extend_from_slice(extra);
        ok(&args);
        ckpt
    }

    fn reconstruct(&self, ckpt: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let mesh = self.path(out);
        let cloud = self.path("test.ply");
        let mut args = vec!["--threads", "1", "reconstruct", "--cloud", s(&cloud), "--checkpoint", s(ckpt), "-o", s(&mesh)];
        args.extend_from_slice(extra);
        ok(&args);
        mesh
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    assert_eq!(cfg.model.encoder.k, 6);
    assert_eq!(cfg.train.steps, 6);
    assert_eq!(cfg.data.n_ref, 5);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn config_rejects_bad_values() {
    for bad in [
        "[train]\nlambda1 = -0.5",
        "[data]\nn_ref = 0",
        "[data]\nsigma = -1.0",
        "[reconstruct]\nsmooth_lambda = 1.5",
        "[model.encoder]\nchannels = [8]\nkeep_ratios = [1.0, 0.5]",
        "[model.encoder]\nk = 0",
        "unknown_key = 1",
        "[train]\nsteps = \"many\"",
    ] {
        assert!(RunConfig::from_toml(bad).is_err(), "accepted {bad:?}");
    }
}

#[test]
fn config_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "[paths]\nsamples = \"data\"\ncheckpoint = \"/abs/model.ckpt\"\n").unwrap();
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.paths.samples.as_deref(), Some(dir.path().join("data").as_path()));
    assert_eq!(cfg.paths.checkpoint.as_deref(), Some(Path::new("/abs/model.ckpt")));
    assert!(cfg.check_paths().is_err());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let v = anyhow::Error::from(ValidationFailure("x".into())).context("outer");
    assert_eq!(exit_code(&v), EXIT_VALIDATION);
    let n = anyhow::Error::from(TrainError::NonFinite {
        step: 1,
        sample: "s".into(),
        op: "relu".into(),
    })
    .context("training");
    assert_eq!(exit_code(&n), EXIT_NUMERIC);
    assert_eq!(exit_code(&anyhow::anyhow!("missing file")), EXIT_INPUT);
}

#[test]
fn config_subcommand_prints_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, SMALL).unwrap();
    let text = ok(&["--config", s(&p), "--seed", "11", "config"]);
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.model.graph.hidden, vec![8, 8]);
}

#[test]
fn bad_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ply");
    assert_eq!(code(&["check-delaunay", "--cloud", s(&missing)]), EXIT_INPUT);
    assert_eq!(code(&["no-such-command"]), EXIT_INPUT);
    assert_eq!(code(&["synth", "--shape", "blob(1)", "-o", s(&missing)]), EXIT_INPUT);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[data]\nn_ref = 0\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "config"]), EXIT_INPUT);
}

#[test]
fn corrupt_oracle_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("c.ply");
    ok(&["synth", "--shape", "sphere(1)", "--n", "200", "-o", s(&cloud)]);
    let oracle = dir.path().join("c.oracle.json");
    let text = std::fs::read_to_string(&oracle).unwrap();
    assert!(text.contains("sphere(1)"));
    std::fs::write(&oracle, &text[..text.len() / 2]).unwrap();
    let out = deepdt(&["prepare", "--cloud", s(&cloud), "-o", s(&dir.path().join("x.dtsm"))]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle"));
    assert!(!dir.path().join("x.dtsm").exists());
}

#[test]
fn check_delaunay_accepts_a_synthetic_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("c.ply");
    ok(&["synth", "--shape", "torus(1,0.3)", "--n", "800", "-o", s(&cloud)]);
    let text = ok(&["check-delaunay", "--cloud", s(&cloud)]);
    assert!(text.contains("0 violations"), "{text}");
}

#[test]
fn end_to_end_pipeline() {
    let w = Workspace::new();

    // zero steps keeps the initial parameters
    let c0 = w.train("zero.ckpt", &["--steps", "0"]);
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let init = cfg.model.init_params(cfg.seed).unwrap().rounded_to_f32();
    let loaded = load_checkpoint(&c0).unwrap();
    assert_eq!(loaded.names(), init.names());
    for (name, m) in init.iter() {
        assert_eq!(loaded.expect(name), m, "{name}");
    }

    // training is reproducible and writes its side files
    let a = w.train("a.ckpt", &[]);
    let b = w.train("b.ckpt", &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c0).unwrap());
    let log = std::fs::read_to_string(w.path("a.loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    assert!(w.path("a.config.toml").exists());

    // reconstruction picks up the model config saved with the checkpoint
    let report = w.path("report.json");
    let m1 = w.reconstruct(&a, "m1.obj", &["--report", s(&report)]);
    let m2 = w.reconstruct(&a, "m2.obj", &[]);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let stages: Vec<&str> = r["stages"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    for st in ["load", "delaunay", "knn", "features", "predict", "extract", "topology", "save"] {
        assert!(stages.contains(&st), "missing stage {st} in {stages:?}");
    }
    assert!(r["tetrahedra"].as_u64().unwrap() > r["finite_tetrahedra"].as_u64().unwrap());
    let sum: f64 = r["stages"].as_array().unwrap().iter().map(|s| s["seconds"].as_f64().unwrap()).sum();
    let total = r["total_seconds"].as_f64().unwrap();
    assert!((sum - total).abs() <= 0.05 * total, "stages {sum} vs total {total}");

    // the dumped effective config reproduces the run
    let dumped = w.path("dumped.toml");
    std::fs::write(&dumped, ok(&["--config", s(&w.cfg()), "config"])).unwrap();
    let samples = w.path("samples");
    let c = w.path("c.ckpt");
    ok(&["--config", s(&dumped), "--threads", "1", "train", "--samples", s(&samples), "-o", s(&c)]);
    assert_eq!(std::fs::read(&c).unwrap(), std::fs::read(&a).unwrap());

    // without smoothing every vertex is an input point
    let raw = w.reconstruct(&a, "raw.ply", &["--no-smooth"]);
    let raw = load_mesh(&raw).unwrap();
    let cloud = deepdt::pointcloud::load_ply(w.path("test.ply")).unwrap().cloud;
    let pts: std::collections::HashSet<[u64; 3]> = cloud.positions().iter().map(|p| p.map(f64::to_bits)).collect();
    assert!(!raw.is_empty());
    assert!(raw.vertices.iter().all(|v| pts.contains(&v.map(|x| (x as f32 as f64).to_bits()))));
    let smoothed = load_mesh(&m1).unwrap();
    assert!(smoothed.vertices.iter().any(|v| !pts.contains(&v.map(|x| (x as f32 as f64).to_bits()))));

    // evaluation prints one JSON line per mode with a fixed key set
    let oracle = w.path("test.oracle.json");
    let json_out = w.path("eval.jsonl");
    assert!(!load_mesh(&m1).unwrap().is_empty());
    {
        let m = m1.clone();
        ok(&[
            "--config",
            s(&w.cfg()),
            "eval",
            "--mesh",
            s(&m),
            "--reference",
            s(&oracle),
            "--points-mode",
            "both",
            "--json-out",
            s(&json_out),
        ]);
        let lines: Vec<serde_json::Value> = std::fs::read_to_string(&json_out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        let mut keys: Vec<&str> = lines[0].as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "accuracy_l1",
                "cd_squared",
                "chamfer_l1",
                "chamfer_rms",
                "completeness_l1",
                "convention",
                "hausdorff",
                "n_reconstruction",
                "n_reference",
                "normal_consistency",
                "points_mode",
            ]
        );
        assert_eq!(lines[0]["points_mode"], "sampled");
        assert_eq!(lines[1]["points_mode"], "vertices");
        assert_eq!(lines[0]["n_reference"], 2000);
        // a mesh against itself
        let own = ok(&["eval", "--mesh", s(&m), "--reference", s(&m), "--points-mode", "vertices"]);
        let own: serde_json::Value = serde_json::from_str(own.lines().next().unwrap()).unwrap();
        assert_eq!(own["chamfer_l1"], 0.0);
        assert!(own["normal_consistency"].as_f64().unwrap() > 1.0 - 1e-12);
        // an impossible threshold is a validation failure
        let cfg_path = w.cfg();
        let failing = ["--config", s(&cfg_path), "eval", "--mesh", s(&m), "--reference", s(&oracle), "--max-chamfer", "0"];
        assert_eq!(code(&failing), EXIT_VALIDATION);
    }

    // a checkpoint from another architecture is refused
    let other = w.path("other.toml");
    std::fs::write(&other, SMALL.replace("hidden = [8, 8]", "hidden = [8]")).unwrap();
    let cloud = w.path("test.ply");
    let bad = deepdt(&["--config", s(&other), "reconstruct", "--cloud", s(&cloud), "--checkpoint", s(&a), "-o", s(&w.path("x.obj"))]);
    assert_eq!(bad.status.code(), Some(EXIT_INPUT));
}
