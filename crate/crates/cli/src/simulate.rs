use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use perceived_returns::dgp::ScenarioFile;
use perceived_returns::model::write_sample;
use perceived_returns::{generate, resolve_scenario, Sample64};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Built-in scenario (sim1, sim2, A1..A7) or a TOML/JSON scenario file.
    #[arg(long, alias = "config")]
    pub scenario: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    /// Sample size; defaults to the scenario's own.
    #[arg(long)]
    pub n: Option<usize>,
}

pub fn run(a: &SimulateArgs) -> Result<()> {
    let (mut spec, targets) = resolve_scenario(&a.scenario)?;
    if let Some(n) = a.n {
        spec = spec.with_n(n);
    }
    spec = spec.with_seed(a.seed, a.stream);
    let sample: Sample64 = generate(&spec)?;
    crate::ensure_dir(&a.out)?;
    let data = a.out.join(format!("{}.csv", spec.label));
    write_sample(&sample, &data)?;
    let scenario = toml::to_string(&ScenarioFile::from_spec(&spec, &targets))?;
    std::fs::write(a.out.join(format!("{}.scenario.toml", spec.label)), scenario)?;
    std::fs::write(a.out.join(format!("{}.targets.json", spec.label)), serde_json::to_string_pretty(&targets)?)?;
    println!("{}", data.display());
    Ok(())
}
