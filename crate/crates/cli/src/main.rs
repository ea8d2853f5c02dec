//! `tq`: transform-quantization compressor for NWT model files.

mod commands;
mod svg;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use tq_core::covariance::Axis;
use tq_core::transform::TransformKind;

#[derive(Parser)]
#[command(
    name = "tq",
    version,
    about = "Compress network weights with decorrelating transforms and rate-distortion optimal bit allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    None,
    #[value(name = "row-klt")]
    RowKlt,
    #[value(name = "row-elt")]
    RowElt,
    #[value(name = "col-klt")]
    ColKlt,
    #[value(name = "col-elt")]
    ColElt,
    #[value(name = "2d")]
    TwoD,
}

impl TransformArg {
    pub fn kind_axis(self) -> (TransformKind, Axis) {
        match self {
            TransformArg::None => (TransformKind::None, Axis::Column),
            TransformArg::RowKlt => (TransformKind::Klt, Axis::Row),
            TransformArg::RowElt => (TransformKind::Elt, Axis::Row),
            TransformArg::ColKlt => (TransformKind::Klt, Axis::Column),
            TransformArg::ColElt => (TransformKind::Elt, Axis::Column),
            TransformArg::TwoD => (TransformKind::TwoD, Axis::Column),
        }
    }
}

#[derive(Args)]
pub struct PipelineOpts {
    /// Row (and basis-column) blocks per layer
    #[arg(long, default_value_t = 8)]
    pub blocks: usize,
    /// Maximum bit-depth per block
    #[arg(long, default_value_t = 16)]
    pub max_bits: u8,
    /// Step-size grid points per search; 0 selects the fine sqrt(2) grid
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Trace-relative ridge for gradient covariances
    #[arg(long, default_value_t = 1e-8)]
    pub ridge: f64,
    /// Probe count when output dimension exceeds the exact-gradient limit
    #[arg(long, default_value_t = 32)]
    pub probes: usize,
}

#[derive(Args)]
pub struct CommonOpts {
    /// Random seed (falls back to TQ_SEED, then 0)
    #[arg(long, env = "TQ_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: logical cores). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer coding gains, gain decompositions, and basis overheads
    Stats {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Matricization axis for the report
        #[arg(long, value_enum, default_value_t = AxisArg::Row)]
        axis: AxisArg,
        #[arg(long, default_value_t = 1e-8)]
        ridge: f64,
        /// CSV output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional SVG bar chart
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Compress a model at one trade-off point or to a target rate
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, value_enum, default_value_t = TransformArg::RowKlt)]
        transform: TransformArg,
        /// Rate-distortion trade-off parameter
        #[arg(long, group = "point")]
        lambda: Option<f64>,
        /// Target rate in bits per weight (bisects the trade-off)
        #[arg(long, group = "point")]
        target_rate: Option<f64>,
        #[arg(long, default_value = "model.tqz")]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Decode a compressed model and report distortion, rate and speed-up
    Eval {
        #[arg(long)]
        tqz: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// CSV output path for the per-layer report (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace the rate-distortion frontier over a list of trade-off points
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, value_enum, default_value_t = TransformArg::RowKlt)]
        transform: TransformArg,
        /// Comma-separated trade-off values
        #[arg(long, group = "lams")]
        lambdas: Option<String>,
        /// Geometric range lo:hi:count
        #[arg(long, group = "lams")]
        lambda_range: Option<String>,
        /// Also sweep the no-transform baseline into `<out>.none.csv`
        #[arg(long, default_value_t = false)]
        baseline_none: bool,
        #[arg(long, default_value = "frontier.csv")]
        out: PathBuf,
        /// Optional SVG frontier plot
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Monte Carlo validation of the high-rate distortion predictions
    ValidateTheory {
        /// Source dimension
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 6)]
        min_depth: u8,
        #[arg(long, default_value_t = 10)]
        max_depth: u8,
        /// CSV report path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate a seeded synthetic model and calibration set
    #[command(hide = true)]
    GenToy {
        /// Architecture: conv3 or conv-dense
        #[arg(long, default_value = "conv3")]
        arch: String,
        /// Weight correlation: white, ar1-input, ar1-output
        #[arg(long, default_value = "ar1-input")]
        correlation: String,
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long, default_value = "model.nwt")]
        out: PathBuf,
        #[arg(long, default_value = "calib.nwt")]
        calib_out: PathBuf,
        #[arg(long, default_value_t = 64)]
        calib_count: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Row,
    Col,
}

impl AxisArg {
    fn axis(self) -> Axis {
        match self {
            AxisArg::Row => Axis::Row,
            AxisArg::Col => Axis::Column,
        }
    }
}

/// Exit discipline: 0 success, 1 usage, 2 format/data error, 3 validation
/// failure.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::ValidationFailed) => {
            eprintln!("validation FAILED");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_workers(common: &CommonOpts) {
    if let Some(n) = common.workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> anyhow::Result<commands::Outcome> {
    match cli.command {
        Command::Stats { model, calib, axis, ridge, out, svg, common } => {
            init_workers(&common);
            commands::stats(&model, &calib, axis.axis(), ridge, common.seed, out.as_deref(), svg.as_deref())
        }
        Command::Compress { model, calib, transform, lambda, target_rate, out, pipeline, common } => {
            init_workers(&common);
            commands::compress(
                &model, &calib, transform, lambda, target_rate, &out, &pipeline, &common,
            )
        }
        Command::Eval { tqz, model, calib, out } => commands::eval(&tqz, &model, &calib, out.as_deref()),
        Command::Sweep {
            model, calib, transform, lambdas, lambda_range, baseline_none, out, svg, pipeline, common,
        } => {
            init_workers(&common);
            commands::sweep(
                &model,
                &calib,
                transform,
                lambdas.as_deref(),
                lambda_range.as_deref(),
                baseline_none,
                &out,
                svg.as_deref(),
                &pipeline,
                &common,
            )
        }
        Command::ValidateTheory { dim, trials, min_depth, max_depth, out, common } => {
            init_workers(&common);
            commands::validate_theory(dim, trials, min_depth, max_depth, out.as_deref(), common.seed)
        }
        Command::GenToy { arch, correlation, rho, out, calib_out, calib_count, common } => {
            commands::gen_toy(&arch, &correlation, rho, &out, &calib_out, calib_count, common.seed)
        }
    }
}
