//! `seqlearn` command-line tool.

mod commands;
mod config;
mod error;
mod logging;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "seqlearn", about = "Sequential netlist representation learning", disable_version_flag = true)]
struct Cli {
    /// TOML config file, or a run manifest to reproduce.
    #[arg(long, global = true, env = "SEQLEARN_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Emit log records as JSON lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(short = 'V', long, action = clap::ArgAction::Version)]
    version: Option<bool>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct CircuitArgs {
    /// ASCII AIGER netlist.
    #[arg(long)]
    aig: Option<PathBuf>,
    /// ISCAS-89 BENCH netlist.
    #[arg(long)]
    bench: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[arg(long)]
    patterns: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    epochs_phase1: Option<usize>,
    #[arg(long)]
    epochs_phase2: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Head hidden width.
    #[arg(long)]
    hidden: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, c: &mut RunConfig) {
        let t = &mut c.train;
        if let Some(v) = self.epochs_phase1 {
            t.epochs_phase1 = v;
        }
        if let Some(v) = self.epochs_phase2 {
            t.epochs_phase2 = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.dim {
            t.model.dim = v;
        }
        if let Some(v) = self.hidden {
            t.model.hidden = v;
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic circuit corpus.
    Gen {
        /// Number of circuits.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one circuit and write per-node statistics.
    Sim {
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Workload JSON (default: p1 = ptr = 0.5 at every input).
        #[arg(long)]
        workload: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        saif: Option<PathBuf>,
        /// Binary flip-flop traces.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Simulate a corpus under random workloads and write a labeled dataset.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON lines.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        hp: TrainArgs,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate dynamic power from simulated and predicted activity.
    Power {
        #[command(flatten)]
        circuit: CircuitArgs,
        #[arg(long)]
        workload: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Activity file; uses predictions when a model is given.
        #[arg(long)]
        saif: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fault-injection flip labels, optionally fine-tuning a flip head.
    Reliab {
        #[command(flatten)]
        circuit: CircuitArgs,
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long)]
        flip_prob: Option<f64>,
        #[command(flatten)]
        sim: SimArgs,
        /// Label JSON lines.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "tuned")]
        model: Option<PathBuf>,
        /// Output checkpoint with the fine-tuned flip head.
        #[arg(long, requires = "model")]
        tuned: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print circuit structure and schedule.
    Inspect {
        #[command(flatten)]
        circuit: CircuitArgs,
        /// Include the node ids of every level.
        #[arg(long)]
        levels: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Sim { .. } => "sim",
            Command::Label { .. } => "label",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Power { .. } => "power",
            Command::Reliab { .. } => "reliab",
            Command::Inspect { .. } => "inspect",
        }
    }
}

fn version() -> &'static str {
    let s = format!(
        "{} (checkpoint format {})",
        env!("CARGO_PKG_VERSION"),
        seqlearn_core::tensor::CHECKPOINT_VERSION
    );
    Box::leak(s.into_boxed_str())
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    logging::init(cli.json_logs);
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed(cli.seed);
    log::debug!("{} with seed {}", cli.cmd.name(), cfg.effective_seed());
    let mut r = commands::Run {
        cfg,
        args: &argv,
        json_logs: cli.json_logs,
    };
    commands::run(&cli.cmd, &mut r)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let matches = match Cli::command().version(version()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
