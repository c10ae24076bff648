//! `brw`: simulate ensembles of critical branching random walks, sample the
//! limit process, and run the verification suite.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "brw", version, about = "Occupation densities of critical branching random walks")]
struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "BRW_THREADS", value_name = "K")]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the rescaled density g^N_s for every s in the time grid.
    Simulate,
    /// Write the largest jumps up to the last time in the grid.
    Jumps {
        /// Number of jumps; defaults to `top_jumps` from the config.
        #[arg(long, short)]
        m: Option<usize>,
    },
    /// Sample one path of the limit process from its jump representation.
    LimitSample,
    /// Run every statistical check and write a JSON report.
    Verify,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;

fn run(cli: Cli) -> Result<bool, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    cfg.validate().map_err(Failure::Usage)?;
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Failure::Usage(anyhow::anyhow!("--threads must be positive")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| Failure::Runtime(e.into()))?;
    }
    let out = cfg.output_dir.clone();
    let result = match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out).map(|_| true),
        Command::Jumps { m } => commands::jumps(&cfg, m.unwrap_or(cfg.top_jumps), &out).map(|_| true),
        Command::LimitSample => commands::limit_sample(&cfg, &out).map(|_| true),
        Command::Verify => commands::verify(&cfg, &out).map(|report| {
            for c in &report.checks {
                eprintln!(
                    "{:<26} {} statistic={:.6} threshold={:?}",
                    c.check_id,
                    if c.pass { "pass" } else { "FAIL" },
                    c.statistic,
                    c.threshold
                );
            }
            for (id, w) in report.warnings() {
                eprintln!("warning: {id}: {w}");
            }
            report.all_pass
        }),
    };
    result.map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY_FAILED),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
