use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use switchtrack::commands;
use switchtrack::config::{Criterion, ExperimentConfig, Mode, Overrides};
use switchtrack_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "switchtrack",
    version,
    about = "Track switching network topologies from cascade data"
)]
struct Cli {
    /// TOML or JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true, value_enum)]
    criterion: Option<Criterion>,
    /// Log filter used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate,
    /// Batch-initialize and track a dataset.
    Track {
        #[arg(long)]
        data: PathBuf,
    },
    /// Identify states by clustering closed-form estimates.
    ClusterIdentify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a results directory against ground truth.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Defaults to the config's evaluation threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Sweep lambda or the number of states.
    Sweep {
        #[arg(long)]
        data: PathBuf,
    },
    /// Check the recovery conditions for a susceptibility matrix.
    Identifiability {
        #[arg(long)]
        matrix: PathBuf,
        /// Bound on nonzeros per row of A.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Convert a CSV or JSONL event log into a dataset.
    Ingest {
        #[arg(long)]
        events: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        mode: cli.mode,
        criterion: cli.criterion,
    });
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn show(path: &Path) {
    println!("{}", path.display());
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => show(&commands::cmd_generate(&cfg)?),
        Command::Track { data } => show(&commands::cmd_track(data, &cfg)?),
        Command::ClusterIdentify { data } => show(&commands::cmd_cluster_identify(data, &cfg)?),
        Command::Evaluate {
            results,
            truth,
            threshold,
        } => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| results.join("evaluation"));
            let thr = threshold.unwrap_or(cfg.evaluation.threshold);
            print_json(&commands::cmd_evaluate(results, truth, thr, &out)?)?;
        }
        Command::Sweep { data } => print_json(&commands::cmd_sweep(data, &cfg)?)?,
        Command::Identifiability { matrix, k } => print_json(&commands::cmd_identifiability(
            matrix,
            *k,
            cli.out.as_deref(),
        )?)?,
        Command::Ingest { events } => show(&commands::cmd_ingest(events, &cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = commands::exit_code(&e);
            if matches!(e, Error::Config(_)) {
                eprintln!("check the configuration file and flags");
            }
            ExitCode::from(code as u8)
        }
    }
}
