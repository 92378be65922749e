//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on configuration/validation errors, 2 when an
//! audit grid completed only partially.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use statetrait_cli::{config::Stage, run, ProviderMode, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "statetrait",
    about = "Contextual psychological profiling pipeline: extraction, variance decomposition, archetypes, and model audits",
    version
)]
struct Args {
    /// TOML run configuration; built-in mock defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Stage to run: ingest, extract, assess, fuse, decompose, validate,
    /// archetypes, audit-gen, audit-reward, report, or all.
    #[arg(long, default_value = "all")]
    stage: String,

    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Force deterministic mock providers regardless of config.
    #[arg(long)]
    mock: bool,

    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();

    let stage: Stage = match args.stage.parse() {
        Ok(stage) => stage,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    let mut config = match &args.config {
        Some(path) => match RunConfig::load(path) {
            Ok(config) => config,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::mock_defaults(args.seed.unwrap_or(0), "statetrait-out"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    if args.mock {
        config.providers.mode = ProviderMode::Mock;
    }

    match run(stage, &config) {
        Ok(outcome) if outcome.partial => {
            eprintln!("completed with partial audit grids (see *_holes.json)");
            ExitCode::from(2)
        }
        Ok(_) => {
            println!("stage '{}' complete; artifacts in {}", stage.name(), config.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
