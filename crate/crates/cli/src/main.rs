use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rkhs_online_cli::{config, experiment, report, CliError};

/// Online kernel regression experiments with certified-bound checks.
#[derive(Parser)]
#[command(name = "rkhs-online", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the config document.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of Monte-Carlo trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Worker threads for trial and index parallelism; defaults to the number
/// of cores.
const THREADS_ENV: &str = "RKHS_ONLINE_THREADS";

fn main() -> ExitCode {
    env_logger::init();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // A later init error only means a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("config error: {THREADS_ENV} must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let Command::Run {
        config: config_path,
        out,
        trials,
        seed,
    } = cli.command;

    let raw = fs::read_to_string(&config_path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut resolved = config::validate_config(&raw)?;
    if let Some(t) = trials {
        if t < 2 {
            return Err(CliError::config(format!(
                "trials: Monte-Carlo estimation needs at least 2 trials, got {t}"
            )));
        }
        if resolved.trials.is_some() {
            resolved.trials = Some(t);
        }
    }
    if let Some(s) = seed {
        resolved.base_seed = s;
    }
    let out_dir = out
        .or_else(|| resolved.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let output = experiment::run_experiment(&resolved)?;
    let paths = report::write_reports(&out_dir, &output.summary, &output.records)?;

    for check in &output.summary.checks {
        println!(
            "[{}] {}: {}",
            if check.pass { "pass" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    println!(
        "{} -> {}, {}",
        if output.summary.pass { "PASS" } else { "FAIL" },
        paths.records.display(),
        paths.summary.display()
    );
    Ok(output.summary.pass)
}
