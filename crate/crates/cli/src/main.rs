use std::path::PathBuf;
use std::process::ExitCode;

use bhplab::experiment::{run_experiment, summarize, write_outputs, ExperimentConfig, ExperimentError, ExperimentKind};
use clap::{Args, Parser, Subcommand};

const WORKERS_ENV: &str = "BHPLAB_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "bhp-lab",
    version,
    about = "Exit statistics and boundary Harnack experiments for jump processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the jump kernel and scale function conditions
    CheckKernel(RunArgs),
    /// Harmonic measure and mean exit time from a point
    ExitStats(RunArgs),
    /// Normalized exit-before-time probabilities of balls
    EpCheck(RunArgs),
    /// Empirical boundary Harnack constants over a radius series
    BhpScan(RunArgs),
    /// Compare harmonic functions with the exit-time factorization
    Factorization(RunArgs),
    /// Layered box decomposition and the exit-ratio band
    BoxMethod(RunArgs),
    /// Survival table and decay rate of the ball chain
    ChainDecay(RunArgs),
    /// Evaluate the acceptance checks declared in finished reports
    Summarize {
        /// Report files to summarize
        paths: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; the BHPLAB_WORKERS environment variable takes precedence
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for the JSON report and CSV files; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated radii, e.g. 0.4,0.2,0.1
    #[arg(long, value_delimiter = ',')]
    r_series: Option<Vec<f64>>,
    /// Base sample count
    #[arg(long)]
    n: Option<u64>,
}

fn workers_from_env() -> Result<Option<usize>, ExperimentError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ExperimentError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        _ => Ok(None),
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), ExperimentError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(ExperimentError::Config(format!(
                "config is for {} but the {} subcommand was used",
                k.name(),
                kind.name()
            )));
        }
    }
    cfg.kind = Some(kind);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = workers_from_env()?.or(args.workers) {
        if w == 0 {
            return Err(ExperimentError::Config("worker count must be positive".into()));
        }
        cfg.workers = Some(w);
    }
    if let Some(rs) = args.r_series {
        cfg.params.r_series = Some(rs);
    }
    if let Some(n) = args.n {
        cfg.n = Some(n);
    }
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    let output = run_experiment(&cfg)?;
    for w in output.report["warnings"].as_array().into_iter().flatten() {
        eprintln!("warning: {}", w.as_str().unwrap_or_default());
    }
    match &cfg.out {
        Some(dir) => {
            for path in write_outputs(&output, dir)? {
                eprintln!("wrote {}", path.display());
            }
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&output.report).expect("reports serialize")
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = match cli.command {
        Command::Summarize { paths } => {
            return match summarize(&paths) {
                Ok(s) => {
                    print!("{}", s.table());
                    ExitCode::from(if s.failed > 0 { 4 } else { 0 })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
        Command::CheckKernel(a) => (ExperimentKind::CheckKernel, a),
        Command::ExitStats(a) => (ExperimentKind::ExitStats, a),
        Command::EpCheck(a) => (ExperimentKind::EpCheck, a),
        Command::BhpScan(a) => (ExperimentKind::BhpScan, a),
        Command::Factorization(a) => (ExperimentKind::Factorization, a),
        Command::BoxMethod(a) => (ExperimentKind::BoxMethod, a),
        Command::ChainDecay(a) => (ExperimentKind::ChainDecay, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
