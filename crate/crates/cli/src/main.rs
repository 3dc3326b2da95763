//! `vdepth`: synthetic benchmark generation, evaluation, spectral analysis,
//! two-stage fusion and temporal consistency from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use vdepth_core::metrics::AbsRelDenominator;
use vdepth_core::spectral::MetricName;

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vdepth", version, about = "Video depth consistency experiments")]
pub struct Cli {
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread budget; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration (see docs/config.md).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenominatorArg {
    Gt,
    Pred,
}

impl From<DenominatorArg> for AbsRelDenominator {
    fn from(d: DenominatorArg) -> Self {
        match d {
            DenominatorArg::Gt => AbsRelDenominator::Gt,
            DenominatorArg::Pred => AbsRelDenominator::Pred,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Absrel,
    Rmse,
    OneMinusDelta1,
}

impl From<MetricArg> for MetricName {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Absrel => MetricName::Absrel,
            MetricArg::Rmse => MetricName::Rmse,
            MetricArg::OneMinusDelta1 => MetricName::OneMinusDelta1,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct EvalFlags {
    /// Fit scale and shift per frame instead of once per video.
    #[arg(long)]
    pub per_frame: bool,
    #[arg(long, value_enum)]
    pub absrel_denominator: Option<DenominatorArg>,
    /// RMSE as sqrt(sum of squares) / N.
    #[arg(long)]
    pub rmse_paper_literal: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene or benchmark spec into containers and a pair graph.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align a prediction to ground truth and report metrics.
    Evaluate {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Spectrum, band table and optional amplitude ratio of a metric sequence.
    Spectrum {
        pred: PathBuf,
        gt: PathBuf,
        /// Second prediction; enables the amplitude-ratio output.
        #[arg(long)]
        pred2: Option<PathBuf>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalFlags,
    },
    /// Run stage 1 on a pair graph, then stage 2.
    Fuse {
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        /// Low-pass cutoff in cycles per frame.
        #[arg(long)]
        cutoff_hz: Option<f64>,
        #[arg(long)]
        window_length: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        /// Cut windows at the overlap midpoint instead of cross-fading.
        #[arg(long)]
        no_blend: bool,
    },
    /// Stage 2 alone on a depth container.
    Denoise {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        cutoff_hz: Option<f64>,
        #[arg(long)]
        window_length: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long)]
        no_blend: bool,
    },
    /// Temporal consistency of a prediction against GT cameras and correspondences.
    Tempcons {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        delta: Option<usize>,
        /// Correspondence table; defaults to `<gt>/correspondences.bin`.
        #[arg(long)]
        correspondences: Option<PathBuf>,
        /// Include dynamic-region correspondences.
        #[arg(long)]
        all_regions: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the noise schedule and timestep spacing.
    Schedule {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    commands::dispatch(cli.command, cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
