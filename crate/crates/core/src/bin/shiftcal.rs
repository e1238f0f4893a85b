use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shiftcal::config::{parse_config, RunConfig};
use shiftcal::experiment::{self, RunError, RunFailure};

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "shiftcal", version, about = "Conformal calibration under covariate shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, mode, seed) and write reports plus an aggregate.
    Run(Common),
    /// Write calibration weight vectors only.
    Weights(Common),
    /// Write a long-form coverage curve CSV for plotting.
    Curve(Common),
}

#[derive(Args)]
struct Common {
    /// Config file.
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    path: Option<PathBuf>,
    #[arg(long, conflicts_with = "path")]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides the config and SHIFTCAL_SEED).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for independent seeds.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load(c: &Common) -> Result<RunConfig, String> {
    let path = c.path.as_ref().or(c.config.as_ref()).expect("clap enforces one");
    let mut cfg = parse_config(path).map_err(|e| e.to_string())?;
    if let Some(seeds) = &c.seeds {
        cfg.seeds = seeds.clone();
    } else if let Ok(s) = std::env::var("SHIFTCAL_SEED") {
        let seed = s
            .trim()
            .parse()
            .map_err(|_| format!("SHIFTCAL_SEED must be an unsigned integer, got `{s}`"))?;
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn report_failures(failures: &[RunFailure]) -> ExitCode {
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in failures {
        eprintln!("failed {}: {}", f.key.file_stem(), f.error);
    }
    ExitCode::from(EXIT_PARTIAL)
}

fn finish(r: Result<Vec<RunFailure>, RunError>) -> ExitCode {
    match r {
        Ok(failures) => report_failures(&failures),
        Err(e @ RunError::Io { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Run(c) | Command::Weights(c) | Command::Curve(c) => c,
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = cfg.output_dir.clone();
    let jobs = common.jobs;
    finish(match cli.command {
        Command::Run(_) => experiment::run(&cfg, &out, jobs).map(|s| s.failures),
        Command::Weights(_) => experiment::write_weights(&cfg, &out, jobs),
        Command::Curve(_) => experiment::write_curves(&cfg, &out, jobs).map(|s| s.failures),
    })
}
