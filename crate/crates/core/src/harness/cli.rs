//! Command-line entry points. Exit codes: 0 success, 2 configuration or
//! usage error, 3 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Overrides};
use super::data::{generate_splits, read_cloud_csv};
use super::run::{ablate, run_experiment, train_net, write_text, ExperimentOutcome};
use crate::compression::{accuracy, DistanceKind};
use crate::net::{load_checkpoint, save_checkpoint};
use crate::ot::{
    exact_wasserstein_small, kl_diag_gaussian, max_sliced_wasserstein, mean_lp, mmd_rbf,
    sliced_wasserstein, Bandwidth, DistanceConfig, MaxMode, Norm, SeedMode,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "depthprune",
    version,
    about = "Depth compression of residual MLPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and save a checkpoint.
    Train(ExperimentArgs),
    /// Train, then remove blocks greedily within the accuracy budget.
    Compress(ExperimentArgs),
    /// Run every cell of the configured sweep and write the aggregated table.
    Ablate(ExperimentArgs),
    /// Accuracy and size of a saved checkpoint on one split of the dataset.
    Eval {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Distance between two point clouds stored as CSV files.
    Distances(DistanceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    n_proj: Option<usize>,
    #[arg(long, value_parser = parse_distance)]
    distance: Option<DistanceKind>,
    #[arg(long)]
    n_samples: Option<usize>,
    /// Directory under which relative output paths are placed.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_distance(s: &str) -> std::result::Result<DistanceKind, String> {
    DistanceKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    MaxSliced,
    Sliced,
    MeanL1,
    MeanL2,
    Mmd,
    Kl,
    Exact,
}

#[derive(Debug, Args)]
struct DistanceArgs {
    cloud_a: PathBuf,
    cloud_b: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::MaxSliced)]
    metric: Metric,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 40)]
    n_proj: usize,
    /// Refine the max-sliced direction by projected gradient ascent.
    #[arg(long)]
    ascent: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        Overrides {
            seed: self.seed,
            lambda: self.lambda,
            delta: self.delta,
            epsilon: self.epsilon,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            n_proj: self.n_proj,
            distance: self.distance,
            n_samples: self.n_samples,
            out_dir: self.out_dir.clone(),
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

/// `v` rounded to 12 significant digits in positional notation.
pub fn format_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{:.11}", v);
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first) and runs the command, writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let splits = generate_splits(&cfg.dataset)?;
            let (net, log) = train_net(&cfg, &splits)?;
            let log_path = cfg.outputs.tagged("train").report;
            write_text(&log_path, &serde_json::to_string_pretty(&log)?)?;
            write_parent(&cfg.outputs.checkpoint)?;
            save_checkpoint(&net, &cfg.outputs.checkpoint)?;
            emit(
                out,
                format!("train_accuracy {}", accuracy(&net, &splits.train)?),
            )?;
            emit(
                out,
                format!("val_accuracy {}", accuracy(&net, &splits.val)?),
            )?;
            emit(
                out,
                format!("checkpoint {}", cfg.outputs.checkpoint.display()),
            )
        }
        Command::Compress(args) => match run_experiment(&args.load()?)? {
            ExperimentOutcome::Single(run) => {
                let r = &run.report;
                emit(out, format!("removed {:?}", r.kept_removals()))?;
                emit(out, format!("dense_accuracy {}", r.dense_accuracy))?;
                emit(out, format!("final_accuracy {}", r.final_accuracy))?;
                emit(out, format!("test_accuracy {}", run.test_accuracy))?;
                emit(out, format!("cpl {} -> {}", r.dense_cpl, r.final_cpl))?;
                emit(out, format!("macs {} -> {}", r.dense_macs, r.final_macs))?;
                emit(out, format!("report {}", run.outputs.report.display()))
            }
            ExperimentOutcome::Sweep(table) => {
                for cell in &table.cells {
                    emit(out, format!("report {}", cell.report_path.display()))?;
                }
                Ok(())
            }
        },
        Command::Ablate(args) => {
            let cfg = args.load()?;
            if cfg.sweep.is_none() {
                return Err(Error::Config("ablate needs a [sweep] section".into()));
            }
            let table = ablate(&cfg)?;
            emit(out, table.columns().join(","))?;
            for row in table.csv_rows() {
                emit(out, row.join(","))?;
            }
            emit(out, format!("table {}", cfg.outputs.table.display()))
        }
        Command::Eval {
            experiment,
            checkpoint,
            split,
        } => {
            let cfg = experiment.load()?;
            let path = checkpoint.unwrap_or_else(|| cfg.outputs.checkpoint.clone());
            let net = load_checkpoint(&path)?;
            let splits = generate_splits(&cfg.dataset)?;
            let data = match split {
                SplitArg::Train => &splits.train,
                SplitArg::Val => &splits.val,
                SplitArg::Test => &splits.test,
            };
            emit(out, format!("accuracy {}", accuracy(&net, data)?))?;
            emit(out, format!("cpl {}", net.critical_path_length()))?;
            emit(out, format!("macs {}", net.macs()))?;
            emit(out, format!("parameters {}", net.live_parameter_count()))
        }
        Command::Distances(args) => emit(out, format_significant(distance(&args)?)),
    }
}

fn write_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn distance(args: &DistanceArgs) -> Result<f64> {
    let a = read_cloud_csv(&args.cloud_a)?;
    let b = read_cloud_csv(&args.cloud_b)?;
    if a.dim() != b.dim() || a.len() != b.len() {
        return Err(Error::shape(format!(
            "{} holds {}x{} but {} holds {}x{}",
            args.cloud_a.display(),
            a.len(),
            a.dim(),
            args.cloud_b.display(),
            b.len(),
            b.dim()
        )));
    }
    let cfg = DistanceConfig {
        p: args.p,
        n_proj: args.n_proj,
        max_mode: if args.ascent {
            MaxMode::ProjectedAscent
        } else {
            MaxMode::RandomSearch
        },
        seed_mode: SeedMode::Seeded(args.seed),
        ..DistanceConfig::default()
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut unused = ChaCha8Rng::seed_from_u64(args.seed);
    match args.metric {
        Metric::MaxSliced => Ok(max_sliced_wasserstein(&a, &b, &cfg, &mut unused)?.value),
        Metric::Sliced => sliced_wasserstein(&a, &b, &cfg, &mut unused),
        Metric::MeanL1 => mean_lp(&a, &b, Norm::L1),
        Metric::MeanL2 => mean_lp(&a, &b, Norm::L2),
        Metric::Mmd => mmd_rbf(&a, &b, Bandwidth::MedianHeuristic),
        Metric::Kl => kl_diag_gaussian(&a, &b),
        Metric::Exact => exact_wasserstein_small(&a, &b, args.p),
    }
}
