//! Command-line front end: simulate scenarios, run the estimators, reproduce
//! the estimate tables and run Monte Carlo sweeps.

mod estimate;
mod output;
mod reproduce;
mod simulate;
mod sweep;
mod tolerances;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use perceived_returns::mi::InstrumentScheme;
use perceived_returns::Dataset64;

#[derive(Parser, Debug)]
#[command(name = "perceived-returns", version, about = "Perceived-returns estimators for binary choice with observed prices")]
struct Cli {
    /// Worker threads for confidence-set grids and sweeps.
    #[arg(long, global = true, env = "LR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a sample from a built-in scenario or a scenario file.
    Simulate(simulate::SimulateArgs),
    /// Fit one estimator to a dataset CSV.
    Estimate(estimate::EstimateArgs),
    /// Regenerate an estimate table with densities, timings and target checks.
    Reproduce(reproduce::ReproduceArgs),
    /// Repeat estimation over independent replications.
    Sweep(sweep::SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct MiArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Minimum number of accepted grid points.
    #[arg(long, default_value_t = 50)]
    pub min_points: usize,
    /// Simulation draws for critical values.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Instrument cells: median splits of excluded instruments only, or of
    /// covariates as well.
    #[arg(long, value_enum, default_value_t = Scheme::Covariates)]
    pub scheme: Scheme,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Excluded,
    Covariates,
}

impl From<Scheme> for InstrumentScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Excluded => InstrumentScheme::ExcludedOnly,
            Scheme::Covariates => InstrumentScheme::WithCovariates,
        }
    }
}

impl MiArgs {
    pub fn options(&self, seed: u64) -> perceived_returns::MiOptions {
        perceived_returns::MiOptions {
            alpha: self.alpha,
            min_points: self.min_points,
            draws: self.draws,
            seed,
            scheme: self.scheme.into(),
            ..Default::default()
        }
    }
}

/// Parses `z_2,z_3` or `2,3` (1-based dataset columns) into `z` column indices.
pub fn parse_instruments(spec: Option<&str>, data: &Dataset64) -> Result<Vec<usize>> {
    let Some(spec) = spec else {
        return Ok(data.excluded_instruments());
    };
    let mut cols = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let num = item.strip_prefix("z_").unwrap_or(item);
        let c: usize = match num.parse::<usize>() {
            Ok(c) if c >= 1 => c - 1,
            _ => bail!("bad instrument `{item}`; use z_<j> or a 1-based column number"),
        };
        if c >= data.m() {
            bail!("instrument `{item}` out of range (dataset has {} z columns)", data.m());
        }
        if data.x_columns_in_z().contains(&c) {
            bail!("`{}` is a covariate, not an excluded instrument", Dataset64::z_name(c));
        }
        if !cols.contains(&c) {
            cols.push(c);
        }
    }
    Ok(cols)
}

pub fn ensure_dir(dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Estimate(a) => estimate::run(&a),
        Command::Reproduce(a) => reproduce::run(&a),
        Command::Sweep(a) => sweep::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<perceived_returns::Error>().map(|e| e.kind()).unwrap_or("error");
            eprintln!("{}", error_json(kind, &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
