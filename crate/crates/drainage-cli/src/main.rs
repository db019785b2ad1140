//! Command-line front end: experiment training, the open-set protocol,
//! drainage ranking from checkpoints, and the property-check runner.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime error, 3 property
//! failure.

use clap::{Parser, Subcommand};
use drainage::config::{preset_names, ExperimentConfig};
use drainage::{check, experiment};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "drainage",
    about = "Classification with a drainage node: training, open-set scoring, ranking, and property checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config (preset name or file), evaluate it, and
    /// write checkpoint + CSV reports.
    Train {
        /// Preset name or path to a config file.
        #[arg(long)]
        config: String,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the top-level seed (module seeds re-derive from it).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the open-set protocol: seeded class splits, constant-drainage
    /// sweep, ROC AUC per scoring rule.
    Osr {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank a dataset CSV by drainage response under a checkpointed model.
    Rank {
        /// Path to a model checkpoint written by `train`.
        checkpoint: PathBuf,
        /// Dataset CSV (`label,clean_label,f0,...`).
        data: PathBuf,
        /// Output ranking CSV.
        out_csv: PathBuf,
        /// Also render an SVG scatter with drainage regions (2D data only).
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the full property suite with fixed seeds and print a pass/fail
    /// table.
    Check {
        /// Base seed for the sampled cases.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(
    config: &str,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, u8> {
    ExperimentConfig::load(config, out.as_deref(), seed).map_err(|e| {
        eprintln!("config error: {e}");
        eprintln!("available presets: {}", preset_names().join(", "));
        EXIT_USAGE
    })
}

fn run() -> Result<(), u8> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage text; --help and --version are
            // not errors.
            let is_usage_error = e.use_stderr();
            let _ = e.print();
            return if is_usage_error { Err(EXIT_USAGE) } else { Ok(()) };
        }
    };

    match cli.command {
        Command::Train { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let summary = experiment::run_train(&cfg).map_err(|e| {
                eprintln!("train failed: {e}");
                EXIT_RUNTIME
            })?;
            println!("{}", summary.summary_line());
        }
        Command::Osr { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let summary = experiment::run_osr(&cfg).map_err(|e| {
                eprintln!("osr failed: {e}");
                EXIT_RUNTIME
            })?;
            for (i, s) in summary.splits.iter().enumerate() {
                let removed: Vec<String> = s.removed.iter().map(|c| c.to_string()).collect();
                println!(
                    "split {i}: removed={{{}}} z_d={} ce/msp={:.4} drainage/msp={:.4} drainage/p_d={:.4}",
                    removed.join(","),
                    s.selected_zd,
                    s.ce_msp_auc,
                    s.drainage_msp_auc,
                    s.drainage_pd_auc
                );
            }
            println!("{}", summary.summary_line());
        }
        Command::Rank {
            checkpoint,
            data,
            out_csv,
            svg,
        } => {
            experiment::run_rank(&checkpoint, &data, &out_csv, svg.as_deref()).map_err(|e| {
                eprintln!("rank failed: {e}");
                EXIT_RUNTIME
            })?;
            println!("wrote {}", out_csv.display());
        }
        Command::Check { seed } => {
            let reports = check::run_all(seed);
            for r in &reports {
                println!("{}", r.summary_line());
            }
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.name.as_str())
                .collect();
            if !failed.is_empty() {
                eprintln!("property failures: {}", failed.join(", "));
                return Err(EXIT_PROPERTY);
            }
            println!("all {} properties passed", reports.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
