//! `fusekit`: fuse, compile, tune and benchmark tensor graphs, and run the
//! latency-aware architecture search.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{exit_code, EXIT_EXHAUSTED, EXIT_USER};

#[derive(Debug, Parser)]
#[command(name = "fusekit", version, about)]
pub struct Cli {
    /// Seed for generated input tensors and for the search.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, fuse and lower a graph and report its metrics.
    Compile {
        graph: PathBuf,
        /// Skip the fusion pass.
        #[arg(long)]
        no_fuse: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List fusion candidates and the accepted plan.
    FuseReport {
        graph: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Measure fused and/or unfused latency on seeded inputs.
    Bench {
        graph: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        /// Measure the fused graph (both are measured when neither flag is set).
        #[arg(long)]
        fused: bool,
        /// Measure the unfused graph.
        #[arg(long)]
        unfused: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Pick a schedule per fused block with the genetic tuner.
    Tune {
        graph: PathBuf,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        generations: usize,
        #[arg(long, default_value_t = 16)]
        population: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the two-phase architecture search described by a config file.
    Search {
        config: PathBuf,
        /// Episode log, one JSON object per line.
        #[arg(long, default_value = "search-history.jsonl")]
        history: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// How a successful command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    Exhausted,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USER)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Exhausted) => ExitCode::from(EXIT_EXHAUSTED),
        Err(e) => {
            eprintln!("fusekit: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
