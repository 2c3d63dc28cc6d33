use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdnet::env::BoundaryRule;
use tdnet::harness::{run_config, ExperimentConfig, ExperimentKind, WeightingChoice};
use tdnet::Error;

/// Reproducible TD-network experiments on the seven-state random walk.
#[derive(Debug, Parser)]
#[command(name = "tdnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Batch MC versus TD on the 25-step prediction chain.
    Exp1(Common),
    /// Action-conditional tree: online RMSE and batch incorrect proportions.
    Exp2(Common),
    /// Learning curves on the bit-only walk.
    Exp3(Common),
    /// Whatever experiment the config file names, including custom runs.
    Run(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated step sizes.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    boundary: Option<BoundaryRule>,
    #[arg(long)]
    weighting: Option<WeightingChoice>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NONCONVERGED: u8 = 3;

fn load(kind: Option<ExperimentKind>, args: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&args.config, kind) {
        (Some(path), _) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            e => e,
        })?,
        (None, Some(kind)) => ExperimentConfig::new(kind),
        (None, None) => return Err(Error::Config("`run` needs --config".into())),
    };
    if let Some(kind) = kind {
        if cfg.experiment != kind {
            return Err(Error::Config(format!(
                "config describes {} but the {kind} command was used",
                cfg.experiment
            )));
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.runs = Some(runs);
    }
    if let Some(alpha) = &args.alpha {
        cfg.alpha = Some(alpha.clone());
    }
    if let Some(b) = args.boundary {
        cfg.boundary = b;
    }
    if let Some(w) = args.weighting {
        cfg.weighting = w;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Exp1(a) => (Some(ExperimentKind::Exp1), a),
        Command::Exp2(a) => (Some(ExperimentKind::Exp2), a),
        Command::Exp3(a) => (Some(ExperimentKind::Exp3), a),
        Command::Run(a) => (None, a),
    };
    let report = load(kind, args).and_then(|cfg| run_config(&cfg, &args.out));
    match report {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            if report.nonconverged {
                eprintln!("tdnet: some runs did not converge; see the all_converged metadata");
                ExitCode::from(EXIT_NONCONVERGED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ (Error::Config(_) | Error::Parse(_))) => {
            eprintln!("tdnet: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("tdnet: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
