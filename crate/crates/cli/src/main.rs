//! `cfhmm`: simulate cohorts, fit the hidden Markov model, impute
//! counterfactual outcomes, evaluate prediction models and run replication
//! studies.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::debug;
use serde::Serialize;

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "cfhmm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Simulation scenario, overriding the configuration.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=4))]
    scenario: Option<u8>,
}

#[derive(Subcommand, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Generate a cohort and its latent truth.
    Simulate,
    /// Fit the model to a cohort by maximum likelihood.
    Fit,
    /// Impute outcomes under the reference testing regime.
    Impute,
    /// Train prediction models and evaluate them on a validation cohort.
    Evaluate,
    /// Run a full simulation study.
    Replicate,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: Command,
    config: &'a RunConfig,
    outputs: &'a [String],
    summary: &'a std::collections::BTreeMap<String, serde_json::Value>,
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(s) = cli.scenario {
        cfg.scenario.id = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    if let Some(n) = cfg.threads.filter(|n| *n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    debug!("resolved configuration: {cfg:?}");
    let result = match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Impute => commands::impute(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Replicate => commands::replicate(&cfg),
    };
    // an unconverged fit still leaves its artifacts and manifest behind
    let outcome = match &result {
        Ok(o) => Some(o),
        Err(CliError::NotConverged { .. }) => None,
        Err(_) => return result.map(|_| ()),
    };
    let empty = commands::Outcome::default();
    let outcome = outcome.unwrap_or(&empty);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command,
        config: &cfg,
        outputs: &outcome.outputs,
        summary: &outcome.summary,
    };
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Output {
        path: cfg.out.display().to_string(),
        source,
    })?;
    cfhmm::io::write_json(&cfg.out.join("manifest.json"), &manifest)?;
    result.map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CFHMM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
