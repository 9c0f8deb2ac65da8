use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use perceived_returns::mi::{MiEngine, PsiPoint};
use perceived_returns::stats::cdf;
use perceived_returns::{fit_cf, fit_probit, generate, resolve_scenario, FitOptions, RngStream, Sample64};
use rayon::prelude::*;

use crate::MiArgs;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMethod {
    Probit,
    Cf,
    Mi,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Built-in scenario or a TOML/JSON scenario file.
    #[arg(long, alias = "config")]
    pub scenario: String,
    #[arg(long, default_value_t = 100)]
    pub replications: u64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SweepMethod::Probit, SweepMethod::Cf])]
    pub methods: Vec<SweepMethod>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mi: MiArgs,
}

/// One estimate from one replication. For `mi` the row records the test of
/// the true parameter vector: `estimate` is Q and `target` the critical value.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub replication: u64,
    pub method: &'static str,
    pub param: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub target: f64,
    pub covered: bool,
}

/// Stream ids above this offset feed critical-value draws, below it samples.
const MI_STREAM_OFFSET: u64 = 1 << 32;

fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn theta_name(j: usize) -> String {
    if j == 0 {
        "Constant".into()
    } else {
        format!("x_{j}")
    }
}

fn replicate(a: &SweepArgs, r: u64) -> Result<Vec<Row>> {
    let (mut spec, t) = resolve_scenario(&a.scenario)?;
    if let Some(n) = a.n {
        spec = spec.with_n(n);
    }
    let spec = spec.with_seed(a.seed, r);
    let s: Sample64 = generate(&spec)?;
    let data = &s.data;
    let opts = FitOptions::default();
    let zc = normal_quantile(1.0 - a.mi.alpha / 2.0);
    let cols: Vec<usize> = t.instruments.iter().map(|&j| spec.instrument_column(j)).collect();
    let mut rows = Vec::new();
    let point = |method: &'static str, param: String, est: f64, se: f64, target: f64| Row {
        replication: r,
        method,
        param,
        estimate: est,
        se: Some(se),
        target,
        covered: (est - target).abs() <= zc * se,
    };
    for m in &a.methods {
        match m {
            SweepMethod::Probit => {
                let f = fit_probit(data, &opts)?;
                let se = f.std_errors();
                for j in 0..f.theta.len() {
                    rows.push(point("probit", theta_name(j), f.theta[j], se[j], t.theta_true[j]));
                }
                rows.push(point("probit", "sigma".into(), f.sigma, f.se_sigma(), t.sigma_true));
            }
            SweepMethod::Cf => {
                let f = fit_cf(data, &cols, &opts)?;
                let se = f.std_errors();
                let k = f.theta.len();
                for j in 0..k {
                    rows.push(point("cf", theta_name(j), f.theta[j], se[j], t.theta_true[j]));
                }
                rows.push(point("cf", "sigma_zeta".into(), f.sigma_zeta, se[k], t.sigma_zeta_true));
                rows.push(point("cf", "rho".into(), f.rho, se[k + 1], t.rho_true));
            }
            SweepMethod::Mi => {
                let mut rng = RngStream::new(a.seed, MI_STREAM_OFFSET + r);
                let ifs = perceived_returns::mi::InstrumentFunctions::new(data, &cols, a.mi.scheme.into())?;
                let engine = MiEngine::with_functions(data, ifs, a.mi.alpha, a.mi.draws, &mut rng)?;
                let mut truth = t.theta_true.clone();
                truth.push(spec.mi_sigma_target(&t));
                let psi = PsiPoint::from_slice(&truth)?;
                let test = engine.evaluate(&psi)?;
                rows.push(Row {
                    replication: r,
                    method: "mi",
                    param: "psi".into(),
                    estimate: test.q,
                    se: None,
                    target: test.critical,
                    covered: test.accepted,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_rows(a: &SweepArgs) -> Result<Vec<Row>> {
    if a.replications < 2 {
        bail!(perceived_returns::Error::Domain("sweep needs at least 2 replications".into()));
    }
    let per: Vec<Vec<Row>> = (0..a.replications).into_par_iter().map(|r| replicate(a, r)).collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn rows_csv(rows: &[Row]) -> String {
    let mut out = String::from("replication,method,param,estimate,se,target,covered\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{},{:.16e},{}",
            r.replication,
            r.method,
            r.param,
            r.estimate,
            opt(r.se),
            r.target,
            r.covered as u8
        );
    }
    out
}

/// Mean, standard deviation, mean reported SE and coverage per `(method, param)`.
pub fn summary_csv(rows: &[Row]) -> String {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.param.as_str())) {
            keys.push((r.method, r.param.as_str()));
        }
    }
    let mut out = String::from("method,param,target,mean,sd,mean_se,coverage,replications\n");
    for (m, p) in keys {
        let sel: Vec<&Row> = rows.iter().filter(|r| r.method == m && r.param == p).collect();
        let n = sel.len() as f64;
        let mean = sel.iter().map(|r| r.estimate).sum::<f64>() / n;
        let sd = (sel.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let ses: Vec<f64> = sel.iter().filter_map(|r| r.se).collect();
        let mean_se = (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64);
        let target = if m == "mi" { None } else { Some(sel[0].target) };
        let coverage = sel.iter().filter(|r| r.covered).count() as f64 / n;
        let _ = writeln!(out, "{m},{p},{},{mean:.6},{sd:.6},{},{coverage:.4},{}", fmt6(target), fmt6(mean_se), sel.len());
    }
    out
}

fn fmt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn run(a: &SweepArgs) -> Result<()> {
    let rows = sweep_rows(a)?;
    crate::ensure_dir(&a.out)?;
    std::fs::write(a.out.join("replications.csv"), rows_csv(&rows))?;
    let summary = summary_csv(&rows);
    std::fs::write(a.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!(normal_quantile(0.5).abs() < 1e-12);
    }
}
