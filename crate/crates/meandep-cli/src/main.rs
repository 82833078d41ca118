//! Command-line driver for mean-dependent nonstationary spatial models.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::CliError;
use config::Config;
use meandep::fitting::FitMethod;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "meandep",
    version,
    about = "Spatial Gaussian models whose covariance depends on the local mean"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread bound.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Estimation method override for fit, test, and experiment runs.
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<FitMethod>,
    /// Square-root transform observations on load.
    #[arg(long, global = true)]
    sqrt_transform: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic station panel plus its ground truth.
    Simulate,
    /// Fit the model and write it as JSON.
    Fit,
    /// Run the likelihood-ratio nonstationarity test.
    Test,
    /// Krige a fitted model to target sites.
    Predict,
    /// Cross-validate the model grid.
    Crossval,
    /// Run a Monte Carlo experiment harness.
    Experiment,
    /// Screen link choices with per-day stationary fits.
    DiagnoseLinks,
}

fn parse_method(s: &str) -> Result<FitMethod, String> {
    match s {
        "stationary" => Ok(FitMethod::Stationary),
        "onestep" => Ok(FitMethod::Onestep),
        "fullmle" | "full-mle" => Ok(FitMethod::FullMle),
        other => Err(format!(
            "unknown method {other:?}; expected stationary, onestep, or fullmle"
        )),
    }
}

fn effective_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(CliError::Config)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }
    if cli.sqrt_transform {
        cfg.sqrt_transform = true;
    }
    if let Some(method) = cli.method {
        cfg.fit.method = method;
        cfg.experiment.method = method;
        if method != FitMethod::Stationary {
            cfg.test.method = method;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let cfg = effective_config(cli)?;
    if let Some(threads) = cfg.threads {
        if threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Fit => commands::cmd_fit(&cfg),
        Command::Test => commands::cmd_test(&cfg),
        Command::Predict => commands::cmd_predict(&cfg),
        Command::Crossval => commands::cmd_crossval(&cfg),
        Command::Experiment => commands::cmd_experiment(&cfg),
        Command::DiagnoseLinks => commands::cmd_diagnose_links(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(meta) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&meta)
                    .unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
            );
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
