use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use deepdt::metrics::PointsMode;
use deepdt_cli::*;

#[derive(Parser)]
#[command(name = "deepdt", version, about = "Surface reconstruction by learned labelling of Delaunay tetrahedra")]
struct Cli {
    /// Run configuration (TOML). Defaults apply to anything not given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores; 1 is the deterministic reference path).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sampled,
    Vertices,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Noisy samples of an analytic shape plus its oracle descriptor.
    Synth {
        /// e.g. `sphere:r=1`, `box(1)-sphere(0.6)`, `torus(R=1,r=0.3)`
        #[arg(long)]
        shape: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, short)]
        out: PathBuf,
        /// Oracle descriptor path (default: next to the cloud, `.oracle.json`).
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Tetrahedralize and label a cloud into a training sample.
    Prepare {
        #[arg(long)]
        cloud: PathBuf,
        /// Analytic oracle descriptor (default: the cloud's `.oracle.json`).
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Watertight mesh used as ground truth instead of an analytic oracle.
        #[arg(long)]
        mesh_oracle: Option<PathBuf>,
        #[arg(long)]
        n_ref: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train on a directory of samples.
    Train {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// CSV loss log (default: next to the checkpoint).
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Reconstruct a mesh from a cloud with a trained checkpoint.
    Reconstruct {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        no_smooth: bool,
        /// Also write the stage report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare a mesh with a reference (oracle `.json`, cloud or mesh).
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum)]
        points_mode: Option<ModeArg>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// Exit with status 4 if Chamfer-L1 exceeds this.
        #[arg(long)]
        max_chamfer: Option<f64>,
        /// Exit with status 4 if normal consistency falls below this.
        #[arg(long)]
        min_nc: Option<f64>,
    },
    /// Tetrahedralize a cloud and verify the result exhaustively.
    CheckDelaunay {
        #[arg(long)]
        cloud: PathBuf,
    },
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    cfg.check_paths()?;
    match cli.cmd {
        Cmd::Synth {
            shape,
            n,
            sigma,
            out,
            oracle,
        } => cmd_synth(&SynthArgs {
            shape: &shape,
            n: n.unwrap_or(cfg.data.n_points),
            sigma: sigma.unwrap_or(cfg.data.sigma),
            seed: cfg.seed,
            out: &out,
            oracle: oracle.as_deref(),
        }),
        Cmd::Prepare {
            cloud,
            oracle,
            mesh_oracle,
            n_ref,
            out,
        } => {
            if let Some(n) = n_ref {
                cfg.data.n_ref = n;
                cfg.validate()?;
            }
            cmd_prepare(&PrepareArgs {
                cloud: &cloud,
                oracle: oracle.as_deref(),
                mesh_oracle: mesh_oracle.as_deref(),
                n_ref: cfg.data.n_ref,
                seed: cfg.seed,
                out: &out,
                normal_k: cfg.reconstruct.normal_k,
            })
            .map(|_| ())
        }
        Cmd::Train {
            samples,
            validation,
            out,
            steps,
            lr,
            loss_log,
        } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(lr) = lr {
                cfg.train.adam.lr = lr;
                cfg.validate()?;
            }
            let samples = samples
                .or_else(|| cfg.paths.samples.clone())
                .context("no sample directory: pass --samples or set paths.samples")?;
            let validation = validation.or_else(|| cfg.paths.validation.clone());
            let out = out
                .or_else(|| cfg.paths.checkpoint.clone())
                .context("no checkpoint path: pass --out or set paths.checkpoint")?;
            cmd_train(
                &cfg,
                &TrainArgs {
                    samples: &samples,
                    validation: validation.as_deref(),
                    out: &out,
                    loss_log: loss_log.as_deref(),
                },
            )
        }
        Cmd::Reconstruct {
            cloud,
            checkpoint,
            out,
            no_smooth,
            report,
        } => {
            let checkpoint = checkpoint
                .or_else(|| cfg.paths.checkpoint.clone())
                .context("no checkpoint: pass --checkpoint or set paths.checkpoint")?;
            // without an explicit config, use the one saved with the checkpoint
            if cli.config.is_none() {
                let side = sidecar_config_path(&checkpoint);
                if side.exists() {
                    let seed = cfg.seed;
                    cfg = RunConfig::load(&side)?;
                    cfg.seed = cli.seed.unwrap_or(seed);
                }
            }
            cmd_reconstruct(
                &cfg,
                &ReconstructArgs {
                    cloud: &cloud,
                    checkpoint: &checkpoint,
                    out: &out,
                    smooth: !no_smooth,
                    report: report.as_deref(),
                },
            )
            .map(|_| ())
        }
        Cmd::Eval {
            mesh,
            reference,
            points_mode,
            samples,
            json_out,
            max_chamfer,
            min_nc,
        } => {
            if let Some(s) = samples {
                cfg.eval.mesh_samples = s;
            }
            let modes = match points_mode {
                None => vec![cfg.eval.points_mode],
                Some(ModeArg::Sampled) => vec![PointsMode::Sampled],
                Some(ModeArg::Vertices) => vec![PointsMode::Vertices],
                Some(ModeArg::Both) => vec![PointsMode::Sampled, PointsMode::Vertices],
            };
            cmd_eval(
                &cfg,
                &EvalArgs {
                    mesh: &mesh,
                    reference: &reference,
                    modes,
                    json_out: json_out.as_deref(),
                    max_chamfer,
                    min_nc,
                },
            )
            .map(|_| ())
        }
        Cmd::CheckDelaunay { cloud } => cmd_check_delaunay(&cfg, &cloud),
        Cmd::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEEPDT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
