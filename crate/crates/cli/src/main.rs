//! `distsig` command-line tool.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 invalid
//! configuration or input data, 3 model file missing or mismatched.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distsig::verify::Fault;

#[derive(Parser)]
#[command(name = "distsig", version, about = "Few-shot text classification from distributional signatures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a learner; writes model.json and log.jsonl.
    Train { config: PathBuf },
    /// Evaluate a model on paired episodes; writes report.json and episodes.csv.
    Eval { config: PathBuf, model: PathBuf },
    /// Write lmi.csv and the signatures of one episode (signatures.csv).
    Stats { config: PathBuf },
    /// Run the self-check suites and print a pass/fail table.
    Verify {
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Break one component on purpose: backward:<op>,
        /// sigma:non-bijective or sigma:non-preserving.
        #[arg(long)]
        fault: Option<Fault>,
    },
    /// Write query representations (and attention weights) of one episode.
    DumpRepr {
        config: PathBuf,
        model: PathBuf,
        /// Replace attention with equal weights.
        #[arg(long)]
        uniform: bool,
    },
    /// Generate a planted-keyword corpus, embeddings, split and run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config } => commands::train_cmd(config),
        Command::Eval { config, model } => commands::eval_cmd(config, model),
        Command::Stats { config } => commands::stats_cmd(config),
        Command::Verify { config, seed, fault } => commands::verify_cmd(config.as_deref(), *seed, *fault),
        Command::DumpRepr { config, model, uniform } => commands::dump_repr_cmd(config, model, *uniform),
        Command::Synth { out, spec, seed } => commands::synth_cmd(out, spec.as_deref(), *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
