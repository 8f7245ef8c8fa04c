use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsrect::commands::{
    cmd_distort, cmd_eval, cmd_gendata, cmd_gradcheck, cmd_pretrain, cmd_rectify, cmd_train,
    format_report, DistortArgs, EvalArgs, GendataArgs, MotionSource, Precision, Rectifier,
    RectifyArgs, TrainArgs,
};
use rsrect::config::RunConfig;
use rsrect::{Error, Result};
use rsrect_core::MotionRanges;

/// Rolling-shutter distortion, rectification and network training.
///
/// Angles on the command line are in degrees; files store radians.
#[derive(Debug, Parser)]
#[command(name = "rsrect", version)]
struct Cli {
    /// TOML run configuration (default: the path in RSRECT_CONFIG, if set).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a GS/RS training set with a manifest.
    Gendata(GendataCli),
    /// Distort a GS image with a motion curve.
    Distort(DistortCli),
    /// Rectify an RS image with known motion or a trained network.
    Rectify(RectifyCli),
    /// Pretrain the motion block on ground-truth motion.
    Pretrain(TrainCli),
    /// Train the whole network end to end.
    Train(TrainCli),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckCli),
    /// Report masked PSNR of rectification over a manifest.
    Eval(EvalCli),
}

#[derive(Debug, Args)]
struct RangeCli {
    /// Largest |t_x| of random motions, pixels.
    #[arg(long)]
    max_tx: Option<f64>,
    /// Largest |r_z| of random motions, degrees.
    #[arg(long)]
    max_rz: Option<f64>,
}

impl RangeCli {
    fn ranges(&self, cfg: &RunConfig) -> MotionRanges {
        MotionRanges::from_degrees(
            self.max_tx.unwrap_or(cfg.motion.max_tx_px),
            self.max_rz.unwrap_or(cfg.motion.max_rz_deg),
        )
    }
}

#[derive(Debug, Args)]
struct GendataCli {
    /// Output directory (manifest.jsonl and samples/).
    #[arg(long)]
    out: PathBuf,
    /// Directory of clean PNG images; procedural scenes when omitted.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    images: usize,
    #[arg(long, default_value_t = 10)]
    motions: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Image side r of the generated samples.
    #[arg(long)]
    size: Option<usize>,
    #[command(flatten)]
    ranges: RangeCli,
}

#[derive(Debug, Args)]
struct DistortCli {
    /// GS input image.
    input: PathBuf,
    /// Motion curve CSV to apply.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    motion: Option<PathBuf>,
    /// Seed of a random degree-2 motion within the configured ranges.
    #[arg(long)]
    random: Option<u64>,
    #[command(flatten)]
    ranges: RangeCli,
    /// Center-crop non-square inputs.
    #[arg(long)]
    crop: bool,
    #[arg(long)]
    out_rs: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    /// The motion actually applied, as CSV.
    #[arg(long)]
    out_motion: PathBuf,
    /// The random trajectory, as JSON (with --random only).
    #[arg(long, requires = "random")]
    out_trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RectifyCli {
    /// RS input image.
    input: PathBuf,
    /// Known motion curve CSV.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    motion: Option<PathBuf>,
    /// Network checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trajectory-fit degree for the network's motion.
    #[arg(long)]
    degree: Option<usize>,
    /// Visibility mask of the RS input (from `distort`).
    #[arg(long)]
    rs_mask: Option<PathBuf>,
    /// Center-crop non-square inputs.
    #[arg(long)]
    crop: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    /// Motion used, as CSV.
    #[arg(long)]
    out_motion: Option<PathBuf>,
    /// Row map used, in the binary RMAP format.
    #[arg(long)]
    out_rowmap: Option<PathBuf>,
    /// GS reference image; masked PSNR is reported on stderr.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainCli {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to start from (fresh initialization when omitted).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pretraining sample cap.
    #[arg(long)]
    max_samples: Option<usize>,
    /// Trajectory-fit degree used for smoothing.
    #[arg(long)]
    degree: Option<usize>,
    /// Disable trajectory smoothing during end-to-end training.
    #[arg(long)]
    no_smoothing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionCli {
    F32,
    F64,
    Both,
}

#[derive(Debug, Args)]
struct GradcheckCli {
    #[arg(long, value_enum, default_value_t = PrecisionCli::Both)]
    precision: PrecisionCli,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalCli {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Evaluate this checkpoint (ground-truth motion when omitted).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    degree: Option<usize>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn required(v: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Usage(format!("{flag} is required (flag or config [paths])")))
}

fn train_args(t: TrainCli, mut cfg: RunConfig, pretrain: bool) -> Result<TrainArgs> {
    if let Some(v) = t.epochs {
        if pretrain {
            cfg.pretrain.epochs = v;
        } else {
            cfg.train.epochs = v;
        }
    }
    if let Some(v) = t.batch_size {
        cfg.train.batch_size = v;
        cfg.pretrain.batch_size = v;
    }
    if let Some(v) = t.lr {
        cfg.optimizer.lr = v;
    }
    if let Some(v) = t.seed {
        cfg.seed = v;
    }
    if let Some(v) = t.max_samples {
        cfg.pretrain.max_samples = v;
    }
    if let Some(v) = t.degree {
        cfg.degree = v;
    }
    if t.no_smoothing {
        cfg.train.smoothing = false;
    }
    Ok(TrainArgs {
        manifest: required(t.manifest, &cfg.paths.dataset, "--manifest")?,
        out: required(t.out, &cfg.paths.checkpoint, "--out")?,
        init: t.init,
        log: t.log,
        config: cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.validate()?;
    match cli.command {
        Command::Gendata(g) => {
            let out = g.out;
            let s = cmd_gendata(&GendataArgs {
                out_dir: out,
                clean_dir: g.clean,
                images: g.images,
                motions: g.motions,
                seed: g.seed.unwrap_or(cfg.seed),
                r: g.size.unwrap_or(cfg.r),
                ranges: g.ranges.ranges(&cfg),
            })?;
            eprintln!("wrote {} records to {}", s.records, s.manifest.display());
            eprintln!("dataset sha256 {}", s.digest);
        }
        Command::Distort(d) => {
            let motion = match (d.motion, d.random) {
                (Some(p), _) => MotionSource::File(p),
                (None, Some(seed)) => MotionSource::Random {
                    seed,
                    ranges: d.ranges.ranges(&cfg),
                },
                (None, None) => unreachable!("clap requires one of --motion/--random"),
            };
            let s = cmd_distort(&DistortArgs {
                input: d.input,
                motion,
                crop: d.crop,
                out_rs: d.out_rs,
                out_mask: d.out_mask,
                out_motion: d.out_motion,
                out_trajectory: d.out_trajectory,
            })?;
            eprintln!("distorted {0}x{0}, {1} visible pixels", s.size, s.visible);
        }
        Command::Rectify(r) => {
            let rectifier = match (r.motion, r.model) {
                (Some(p), _) => Rectifier::Motion(p),
                (None, Some(checkpoint)) => Rectifier::Model {
                    checkpoint,
                    degree: r.degree.unwrap_or(cfg.degree),
                },
                (None, None) => unreachable!("clap requires one of --motion/--model"),
            };
            let s = cmd_rectify(&RectifyArgs {
                input: r.input,
                rectifier,
                crop: r.crop,
                input_mask: r.rs_mask,
                out: r.out,
                out_mask: r.out_mask,
                out_motion: r.out_motion,
                out_rowmap: r.out_rowmap,
                reference: r.reference,
            })?;
            eprintln!("rectified {0}x{0}, {1} visible pixels", s.size, s.visible);
            if let Some(p) = s.psnr {
                eprintln!("masked PSNR {p:.2} dB");
            }
        }
        Command::Pretrain(t) => {
            let a = train_args(t, cfg, true)?;
            let recs = cmd_pretrain(&a, |r| {
                eprintln!(
                    "pretrain epoch {} step {} loss {:.6}",
                    r.epoch, r.step, r.loss
                )
            })?;
            if let (Some(first), Some(last)) = (recs.first(), recs.last()) {
                eprintln!(
                    "motion loss {:.6} -> {:.6}; wrote {}",
                    first.loss,
                    last.loss,
                    a.out.display()
                );
            }
        }
        Command::Train(t) => {
            let a = train_args(t, cfg, false)?;
            let recs = cmd_train(&a, |r| {
                eprintln!(
                    "epoch {} step {} L_total {:.6} psnr_masked {:.2}",
                    r.epoch, r.step, r.loss.total, r.psnr_masked
                )
            })?;
            if let (Some(first), Some(last)) = (recs.first(), recs.last()) {
                eprintln!(
                    "L_total {:.6} -> {:.6}; wrote {}",
                    first.loss.total,
                    last.loss.total,
                    a.out.display()
                );
            }
        }
        Command::Gradcheck(g) => {
            let precision = match g.precision {
                PrecisionCli::F32 => Precision::F32,
                PrecisionCli::F64 => Precision::F64,
                PrecisionCli::Both => Precision::Both,
            };
            let mut reports = Vec::new();
            let res = cmd_gradcheck(precision, g.seed, &mut reports);
            for r in &reports {
                println!("{}", format_report(r));
            }
            res?;
        }
        Command::Eval(e) => {
            let rep = cmd_eval(&EvalArgs {
                manifest: required(e.manifest, &cfg.paths.dataset, "--manifest")?,
                model: e.model,
                degree: e.degree.unwrap_or(cfg.degree),
                report: e.report,
            })?;
            println!(
                "{} samples, method {}, mean masked PSNR {:.2} dB, min {:.2} dB, exact {}",
                rep.samples, rep.method, rep.mean_psnr, rep.min_psnr, rep.exact
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
