//! Batch command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

mod commands;
mod config;
mod manifest;

pub use commands::{
    cmd_blocks, cmd_conflicts, cmd_fit, cmd_pipeline, cmd_risk, cmd_simulate, execute_stage,
    stage_fingerprint, CovariateSelection, BLOCKS_FILE, COVARIATES_FILE, FIT_FILE,
    RISK_SUMMARY_FILE, STAGES,
};
pub use config::{Coordinates, RunConfig, SiteInput};
pub use manifest::{sha256_bytes, sha256_file, Fingerprint, Manifest, StageRecord, MANIFEST_FILE};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::inference::ModelName;
use crate::risk::HOURS_PER_YEAR;
use crate::synth::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Internal(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "pedrisk", version, about = "Pedestrian crash risk from trajectory conflicts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON); for `simulate`, the scenario document.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Overrides the configured base seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Comma-separated model list, e.g. `M1,M3a`.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Extrapolation horizon in years (8766 h each).
    #[arg(long, global = true, value_name = "Y")]
    pub years: Option<f64>,
    /// Write per-chain trace CSVs.
    #[arg(long, global = true)]
    pub traces: bool,
    /// Validate the configuration and report what would run.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Detect pedestrian-vehicle conflicts.
    Conflicts,
    /// Build per-cycle block extremes and covariates.
    Blocks,
    /// Fit the GEV models.
    Fit,
    /// Compute crash risk from the fitted models.
    Risk,
    /// Generate synthetic data from a scenario.
    Simulate,
    /// Run conflicts, blocks, fit and risk, skipping up-to-date stages.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(models) = &cli.models {
        cfg.models = models
            .iter()
            .map(|m| m.parse::<ModelName>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(y) = cli.years {
        cfg.horizon_hours = y * HOURS_PER_YEAR;
    }
    if cli.traces {
        cfg.export_traces = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dry_run(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    for s in &cfg.sites {
        if !s.trajectories.is_file() {
            return Err(CliError::Data(format!(
                "site {}: trajectory file {} not found",
                s.site_id,
                s.trajectories.display()
            )));
        }
    }
    let stages: Vec<&str> = match cli.command {
        Command::Pipeline => STAGES.to_vec(),
        Command::Conflicts => vec!["conflicts"],
        Command::Blocks => vec!["blocks"],
        Command::Fit => vec!["fit"],
        Command::Risk => vec!["risk"],
        Command::Simulate => vec![],
    };
    let manifest = Manifest::load(&cfg.out_dir);
    println!("config ok: {} site(s), models {:?}", cfg.sites.len(), cfg.models);
    for stage in stages {
        let state = match stage_fingerprint(stage, cfg, &cfg.out_dir) {
            Ok(fp) if manifest.is_fresh(stage, &fp, &cfg.out_dir) => "up to date",
            _ => "would run",
        };
        println!("{stage}: {state}");
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::Simulate {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("--config SCENARIO is required".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        if let Some(seed) = cli.seed {
            match &mut scenario {
                Scenario::Blocks(s) => s.seed = seed,
                Scenario::Crossing(s) => s.seed = seed,
                Scenario::Cycles(s) => s.seed = seed,
            }
        }
        if cli.dry_run {
            println!("scenario ok");
            return Ok(());
        }
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        for p in cmd_simulate(&scenario, &out)? {
            println!("wrote {}", p.display());
        }
        return Ok(());
    }

    let cfg = load_config(cli)?;
    if cli.dry_run {
        return dry_run(cli, &cfg);
    }
    let out = cfg.out_dir.clone();
    let stage = match cli.command {
        Command::Conflicts => "conflicts",
        Command::Blocks => "blocks",
        Command::Fit => "fit",
        Command::Risk => "risk",
        Command::Pipeline => {
            let ran = cmd_pipeline(&cfg, &out)?;
            println!("pipeline complete; ran {ran:?}");
            return Ok(());
        }
        Command::Simulate => unreachable!("handled above"),
    };
    execute_stage(stage, &cfg, &out, false)?;
    println!("{stage} complete: {}", out.display());
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .is_test(cfg!(test))
        .try_init();

    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Internal(format!("thread pool: {e}"))),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
