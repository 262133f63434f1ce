use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntlab_cli::config::{ablation_grid, table1_grid, Grid, Severity};
use ntlab_cli::features::export_features;
use ntlab_cli::sweep::{run_sweep, SweepOptions};
use ntlab_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ntlab", version, about = "Negative-transfer sweeps on synthetic domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel training runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Added to every seed of the grid
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the grid of a config file
    Run(SweepArgs),
    /// Report config violations without running anything
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write learned features and gate weights for a dataset
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Base and gate over four perturbation rates and four label fractions
    SweepTable1(SweepArgs),
    /// Every ablation variant at eps 0.7, L 30%
    Ablate(SweepArgs),
}

fn load(args: &SweepArgs, required: bool) -> Result<ExperimentConfig, CliError> {
    match &args.config {
        Some(p) => ExperimentConfig::load(p),
        None if required => Err(CliError::Invalid("--config is required".into())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn sweep(config: ExperimentConfig, args: &SweepArgs) -> Result<ExitCode, CliError> {
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    for v in config.violations() {
        if v.severity == Severity::Warning {
            log::warn!("{v}");
        }
    }
    let summary = run_sweep(
        &config,
        &SweepOptions {
            jobs: args.jobs,
            seed_offset: args.seed_offset,
            out_dir,
        },
    )?;
    println!(
        "{} rows ({} failed) -> {}",
        summary.rows.len(),
        summary.n_failed(),
        summary.results_path.display()
    );
    println!("aggregate -> {}", summary.aggregate_path.display());
    Ok(if summary.all_failed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn preset(args: &SweepArgs, grid: fn(Vec<u64>) -> Grid) -> Result<ExitCode, CliError> {
    let mut config = load(args, false)?;
    config.grid = grid((1..=5).collect());
    sweep(config, args)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(args) => sweep(load(&args, true)?, &args),
        Command::Validate { config } => {
            let violations = ExperimentConfig::load(&config)?.violations();
            for v in &violations {
                println!("{v}");
            }
            let errors = violations.iter().filter(|v| v.severity == Severity::Error).count();
            if errors == 0 {
                println!("ok: {} warning(s)", violations.len());
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::ExportFeatures {
            checkpoint,
            dataset,
            out,
        } => {
            let n = export_features(&checkpoint, &dataset, &out)?;
            println!("{n} rows -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepTable1(args) => preset(&args, table1_grid),
        Command::Ablate(args) => preset(&args, ablation_grid),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
