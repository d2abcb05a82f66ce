use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use comparables::metrics::DEFAULT_MIN_REGION_N;

mod commands;
mod manifest;

use commands::MethodArg;

#[derive(Debug, Parser)]
#[command(name = "comparables", version, about = "Comparable-sales property valuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a known price model.
    Synth {
        /// TOML config; defaults are used when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Parse, validate and clean a raw CSV into a canonical dataset.
    Ingest {
        csv: PathBuf,
        schema: PathBuf,
        /// TOML cleaning config; defaults are used when omitted.
        #[arg(long)]
        cleaning_config: Option<PathBuf>,
        /// Skip the cleaning step. Rows failing validation are still dropped.
        #[arg(long)]
        no_clean: bool,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Split a dataset by offer date into train (before) and test (on or after).
    Split {
        dataset: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        cutoff: NaiveDate,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Evolve a similarity genome on a training set.
    Train {
        dataset: PathBuf,
        /// TOML EA config; defaults are used when omitted.
        ea_config: Option<PathBuf>,
        #[arg(long)]
        schema: PathBuf,
        /// Upper bound on post-selection size: `inf` or a positive integer.
        #[arg(long, default_value = "inf", value_parser = parse_m_cap)]
        m_cap: MCap,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Predict every test property and write one witness per line.
    Predict {
        train: PathBuf,
        test: PathBuf,
        /// Genome JSON file, or `lbs` / `unweighted` for a baseline.
        method: String,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score witnesses against the test set's ground truth.
    Evaluate {
        witnesses: PathBuf,
        test: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_REGION_N)]
        min_region_n: usize,
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy)]
struct MCap(Option<u32>);

fn parse_m_cap(s: &str) -> Result<MCap> {
    if s == "inf" {
        return Ok(MCap(None));
    }
    match s.parse::<u32>() {
        Ok(m) if m >= 1 => Ok(MCap(Some(m))),
        _ => Err(anyhow!("expected `inf` or a positive integer, got `{s}`")),
    }
}

fn run(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::Synth { config, run_dir } => commands::synth(config.as_deref(), &run_dir),
        Command::Ingest {
            csv,
            schema,
            cleaning_config,
            no_clean,
            run_dir,
        } => commands::ingest(&csv, &schema, cleaning_config.as_deref(), no_clean, &run_dir),
        Command::Split {
            dataset,
            schema,
            cutoff,
            run_dir,
        } => commands::split(&dataset, &schema, cutoff, &run_dir),
        Command::Train {
            dataset,
            ea_config,
            schema,
            m_cap,
            run_dir,
        } => commands::train(&dataset, &schema, ea_config.as_deref(), m_cap.0, &run_dir),
        Command::Predict {
            train,
            test,
            method,
            schema,
            run_dir,
        } => commands::predict(&train, &test, &schema, &MethodArg::parse(&method), &run_dir),
        Command::Evaluate {
            witnesses,
            test,
            schema,
            min_region_n,
            run_dir,
        } => commands::evaluate(&witnesses, &test, &schema, min_region_n, &run_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
