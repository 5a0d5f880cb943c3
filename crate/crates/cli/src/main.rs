use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use netpi_cli::{execute, parse_config, Verb};

/// Learn network controllers for unknown linear plants.
#[derive(Parser)]
#[command(name = "netpi", version)]
struct Cli {
    #[command(subcommand)]
    verb: VerbArg,

    /// TOML configuration; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent runs (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum VerbArg {
    /// Learn one controller and write its history, rollout and summary.
    Train,
    /// Run the lesion protocol and write the outcome table.
    Lesion,
    /// Sweep episode length, discount or exploration.
    Sweep,
    /// Solve the known-dynamics problem and write the optimal gain.
    Oracle,
}

fn run(cli: Cli) -> Result<bool> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut config = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output = out;
    }
    let verb = match cli.verb {
        VerbArg::Train => Verb::Train,
        VerbArg::Lesion => Verb::Lesion,
        VerbArg::Sweep => Verb::Sweep,
        VerbArg::Oracle => Verb::Oracle,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build()?;
    let report = pool.install(|| execute(&config, verb))?;
    println!("{}", report.message);
    Ok(report.ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
