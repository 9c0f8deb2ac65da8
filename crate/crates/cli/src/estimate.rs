use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use perceived_returns::model::read_sample;
use perceived_returns::{confidence_set, fit_cf, fit_probit, FitOptions, Sample64};
use serde::Serialize;

use crate::output::{CfJson, MiJson, ProbitJson};
use crate::MiArgs;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Probit,
    Cf,
    Mi,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(value_enum)]
    pub method: Method,
    /// Dataset CSV with header `s,price,x_1..x_k,z_1..z_m`.
    #[arg(long)]
    pub data: PathBuf,
    /// Excluded instruments, e.g. `z_2,z_3`; defaults to all of them.
    #[arg(long)]
    pub instruments: Option<String>,
    /// Required for `mi`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub mi: MiArgs,
}

fn emit<S: Serialize>(value: &S, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text + "\n")?
        }
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout(), "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

pub fn run(a: &EstimateArgs) -> Result<()> {
    let sample: Sample64 = read_sample(&a.data)?;
    let data = &sample.data;
    let opts = FitOptions::default();
    match a.method {
        Method::Probit => emit(&ProbitJson::new(&fit_probit(data, &opts)?, data.n()), a.out.as_ref()),
        Method::Cf => {
            let z = crate::parse_instruments(a.instruments.as_deref(), data)?;
            emit(&CfJson::new(&fit_cf(data, &z, &opts)?, data.n()), a.out.as_ref())
        }
        Method::Mi => {
            let Some(seed) = a.seed else {
                bail!("`estimate mi` requires --seed");
            };
            let z = crate::parse_instruments(a.instruments.as_deref(), data)?;
            let cs = confidence_set(data, &z, &a.mi.options(seed))?;
            emit(&MiJson::new(&cs, data.n(), seed, &z), a.out.as_ref())
        }
    }
}
