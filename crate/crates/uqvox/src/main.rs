use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uqvox::commands::{self, Method, Warnings};
use uqvox::config::{parse_pairs, PipelineConfig};
use uqvox::CliError;
use uqvox_core::metrics::ScoreKind;

/// Depth-uncertainty occupancy grids and hierarchical conformal prediction
/// for voxel scenes. Prints one JSON summary line on success.
#[derive(Parser)]
#[command(name = "uqvox", version)]
struct Cli {
    /// Worker threads (outputs do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for generation and the calibration/test split.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SplitFlags {
    /// Calibration share of the voxels, in (0, 1).
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labels, a depth estimate and classifier output.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: SplitFlags,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Build an occupancy grid from a depth estimate.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Binary grid from the mean depths instead of the probabilistic grid.
        #[arg(long)]
        binary: bool,
    },
    /// Calibrate a conformal predictor and write the model JSON.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: SplitFlags,
        #[arg(long)]
        softmax: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "hcp")]
        method: Method,
        /// Default miscoverage rate.
        #[arg(long)]
        alpha: Option<f64>,
        /// Per-class rate, e.g. `person=0.2`. Repeatable.
        #[arg(long = "alpha-target", value_name = "CLASS=RATE")]
        alpha_target: Vec<String>,
        /// Occupancy miss rate of a rare class, e.g. `person=0.1`. Repeatable.
        #[arg(long = "alpha-o", value_name = "CLASS=RATE")]
        alpha_o: Vec<String>,
        /// Rare class (label or name). Repeatable; replaces the configured set.
        #[arg(long)]
        rare: Vec<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Fail with exit status 4 on statistical degeneracy warnings.
        #[arg(long)]
        strict: bool,
    },
    /// Apply a model to the test voxels and write metrics.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        softmax: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Metrics JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-class CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Occupied-recall / IoU table for the gating score functions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        split: SplitFlags,
        #[arg(long)]
        softmax: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score functions; all three when omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        score: Vec<Score>,
        /// Comma-separated target recalls.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        targets: Vec<f64>,
        #[arg(long, default_value = "person")]
        rare: String,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Score {
    Kl,
    Class,
    Occupied,
}

impl From<Score> for ScoreKind {
    fn from(s: Score) -> Self {
        match s {
            Score::Kl => ScoreKind::Kl,
            Score::Class => ScoreKind::Class,
            Score::Occupied => ScoreKind::Occupied,
        }
    }
}

fn load(common: &Common, split: Option<&SplitFlags>) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = split.and_then(|s| s.split) {
        cfg.split = s;
    }
    uqvox::config::check_split(cfg.split)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Simulate { common, split, out_dir } => {
            let cfg = load(&common, Some(&split))?;
            let out_dir = out_dir.or_else(|| cfg.paths.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            commands::simulate(&cfg, &commands::SimulateArgs { out_dir })
        }
        Command::Project { common, depth, out, binary } => {
            let cfg = load(&common, None)?;
            commands::project(&cfg, &commands::ProjectArgs { depth, out, binary })
        }
        Command::Calibrate {
            common,
            split,
            softmax,
            labels,
            out,
            method,
            alpha,
            alpha_target,
            alpha_o,
            rare,
            epsilon,
            strict,
        } => {
            let mut cfg = load(&common, Some(&split))?;
            let c = &mut cfg.conformal;
            if let Some(a) = alpha {
                c.alpha = a;
            }
            c.alpha_target.extend(parse_pairs(&alpha_target, "alpha-target")?);
            if !rare.is_empty() {
                c.rare = rare;
                c.alpha_o.clear();
            }
            c.alpha_o.extend(parse_pairs(&alpha_o, "alpha-o")?);
            if let Some(e) = epsilon {
                c.epsilon = e;
            }
            let mut w = Warnings::new(strict);
            commands::calibrate(&cfg, &commands::CalibrateArgs { softmax, labels, out, method }, &mut w)
        }
        Command::Evaluate { model, softmax, labels, out, csv, strict } => {
            let mut w = Warnings::new(strict);
            commands::evaluate(&commands::EvaluateArgs { model, softmax, labels, out, csv }, &mut w)
        }
        Command::Sweep { common, split, softmax, labels, out, score, targets, rare, epsilon } => {
            let mut cfg = load(&common, Some(&split))?;
            if let Some(e) = epsilon {
                cfg.conformal.epsilon = e;
            }
            let scores = if score.is_empty() { ScoreKind::ALL.to_vec() } else { score.into_iter().map(Into::into).collect() };
            commands::sweep(&cfg, &commands::SweepArgs { softmax, labels, out, scores, targets, rare })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: config error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
