use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use perceived_returns::report::{
    default_support, envelope, pooled_density, render_table, timing_report, write_dat, MethodFit, TimingRun, DEFAULT_SUPPORT_POINTS,
};
use perceived_returns::{
    builtin_scenario, cf_returns, confidence_set, fit_cf, fit_probit, generate, mi_returns_bounds,
    probit_returns, CfFit64, ConfidenceSet64, FitOptions, ProbitFit64, ReturnsDistribution, ReturnsDistribution64,
    ReturnsKind, Sample64, ScenarioTargets,
};
use serde::Serialize;

use crate::tolerances::{EstimateTolerance, Tolerances};
use crate::MiArgs;

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    /// Table id: 1, 2 or A1..A7.
    #[arg(long)]
    pub table: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Tolerance file replacing the built-in defaults.
    #[arg(long)]
    pub tolerances: Option<PathBuf>,
    #[command(flatten)]
    pub mi: MiArgs,
}

/// Table id normalized to `1`, `2` or `A1`..`A7`.
fn table_id(raw: &str) -> Result<(String, &'static str)> {
    let key = raw.replace('.', "").to_ascii_uppercase();
    let scenario = match key.as_str() {
        "1" => "sim1",
        "2" => "sim2",
        "A1" => "A1",
        "A2" => "A2",
        "A3" => "A3",
        "A4" => "A4",
        "A5" => "A5",
        "A6" => "A6",
        "A7" => "A7",
        _ => bail!(perceived_returns::Error::Domain(format!("unknown table `{raw}`; expected 1, 2 or A1..A7"))),
    };
    Ok((key, scenario))
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct Check {
    pub method: String,
    pub param: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub target: f64,
    /// Whether the method is consistent for this target in this scenario.
    pub expected: bool,
    pub within: bool,
    /// `pass`, `expected_miss` or `fail`.
    pub status: &'static str,
}

fn status(within: bool, expected: bool) -> &'static str {
    match (within, expected) {
        (true, _) => "pass",
        (false, false) => "expected_miss",
        (false, true) => "fail",
    }
}

#[derive(Serialize)]
struct CheckReport<'a> {
    table: &'a str,
    scenario: &'a str,
    n: usize,
    seed: u64,
    tolerance: EstimateTolerance,
    ok: bool,
    checks: &'a [Check],
}

fn point_check(method: &str, param: &str, est: f64, se: f64, target: f64, expected: bool, tol: &EstimateTolerance) -> Check {
    let within = (est - target).abs() <= tol.band(se);
    Check {
        method: method.into(),
        param: param.into(),
        estimate: Some(est),
        se: Some(se),
        lo: None,
        hi: None,
        target,
        expected,
        within,
        status: status(within, expected),
    }
}

fn theta_name(j: usize) -> String {
    if j == 0 {
        "Constant".into()
    } else {
        format!("x_{j}")
    }
}

fn probit_checks(fit: &ProbitFit64, t: &ScenarioTargets, expected: bool, tol: &EstimateTolerance) -> Vec<Check> {
    let se = fit.std_errors();
    let mut out: Vec<Check> =
        (0..fit.theta.len()).map(|j| point_check("probit", &theta_name(j), fit.theta[j], se[j], t.theta_true[j], expected, tol)).collect();
    out.push(point_check("probit", "sigma", fit.sigma, fit.se_sigma(), t.sigma_true, expected, tol));
    out
}

fn cf_checks(method: &str, fit: &CfFit64, t: &ScenarioTargets, expected: bool, tol: &EstimateTolerance) -> Vec<Check> {
    let k = fit.theta.len();
    let se = fit.std_errors();
    let mut out: Vec<Check> =
        (0..k).map(|j| point_check(method, &theta_name(j), fit.theta[j], se[j], t.theta_true[j], expected, tol)).collect();
    out.push(point_check(method, "sigma_zeta", fit.sigma_zeta, se[k], t.sigma_zeta_true, expected, tol));
    out.push(point_check(method, "rho", fit.rho, se[k + 1], t.rho_true, expected, tol));
    out
}

fn mi_checks(cs: &ConfidenceSet64, t: &ScenarioTargets, sigma_target: f64, expected: bool) -> Vec<Check> {
    let bounds = cs.bounds();
    let k = t.theta_true.len();
    let targets: Vec<(String, f64)> =
        (0..k).map(|j| (theta_name(j), t.theta_true[j])).chain([("sigma_eps".to_string(), sigma_target)]).collect();
    targets
        .into_iter()
        .enumerate()
        .map(|(j, (param, target))| {
            let within = cs.covers(j, target);
            let (lo, hi) = bounds.as_ref().map(|b| (Some(b[j].0), Some(b[j].1))).unwrap_or((None, None));
            Check { method: "mi".into(), param, estimate: None, se: None, lo, hi, target, expected, within, status: status(within, expected) }
        })
        .collect()
}

/// Gaussian kernel density of the hidden latent, Silverman bandwidth.
fn latent_kde(pi: &[f64]) -> Result<ReturnsDistribution64> {
    let n = pi.len() as f64;
    let mean = pi.iter().sum::<f64>() / n;
    let sd = (pi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ReturnsDistribution::new(pi.to_vec(), 1.06 * sd * n.powf(-0.2), ReturnsKind::Probit)?)
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

enum Fit {
    Probit(ProbitFit64),
    Cf(CfFit64),
}

pub fn run(a: &ReproduceArgs) -> Result<()> {
    let (id, scenario) = table_id(&a.table)?;
    let tol = Tolerances::load(a.tolerances.as_deref())?.estimates;
    let (spec, targets) = builtin_scenario(scenario)?;
    let spec = spec.with_n(a.n).with_seed(a.seed, 0);
    let sample: Sample64 = generate(&spec)?;
    let data = &sample.data;
    let opts = FitOptions::default();
    let z_col = |j: usize| spec.instrument_column(j);

    let mut fits: Vec<(String, Fit)> = Vec::new();
    let mut timings = Vec::new();
    let mut checks = Vec::new();

    let (probit, secs) = timed(|| fit_probit(data, &opts));
    let probit = probit?;
    timings.push(TimingRun { scenario: scenario.into(), method: "probit".into(), seconds: secs });
    checks.extend(probit_checks(&probit, &targets, !spec.price_endogenous(), &tol));
    fits.push(("probit".into(), Fit::Probit(probit)));

    // Table 2 fits the control function once per instrument; other tables
    // use the instruments their targets assume
    let cf_runs: Vec<(String, Vec<usize>)> = if id == "2" {
        (0..spec.p()).map(|j| (format!("cf_z{}", j + 1), vec![j])).collect()
    } else {
        vec![("cf".into(), targets.instruments.clone())]
    };
    for (label, subset) in cf_runs {
        let cols: Vec<usize> = subset.iter().map(|&j| z_col(j)).collect();
        let (fit, secs) = timed(|| fit_cf(data, &cols, &opts));
        let fit = fit?;
        timings.push(TimingRun { scenario: scenario.into(), method: label.clone(), seconds: secs });
        let valid = subset.iter().all(|&j| spec.instrument_valid(j));
        checks.extend(cf_checks(&label, &fit, &targets, valid, &tol));
        fits.push((label, Fit::Cf(fit)));
    }

    let mut cs = None;
    if id.starts_with('A') {
        let cols: Vec<usize> = targets.instruments.iter().map(|&j| z_col(j)).collect();
        let (set, secs) = timed(|| confidence_set(data, &cols, &a.mi.options(a.seed)));
        let set = set?;
        timings.push(TimingRun { scenario: scenario.into(), method: "mi".into(), seconds: secs });
        let rho = targets.rho_true;
        let expected = (0.0..=1.0).contains(&rho);
        checks.extend(mi_checks(&set, &targets, spec.mi_sigma_target(&targets), expected));
        cs = Some((set, cols));
    }

    crate::ensure_dir(&a.out)?;
    let method_fits: Vec<(&str, MethodFit<'_, f64>)> = fits
        .iter()
        .map(|(l, f)| match f {
            Fit::Probit(p) => (l.as_str(), MethodFit::Probit(p)),
            Fit::Cf(c) => (l.as_str(), MethodFit::ControlFunction(c)),
        })
        .collect();
    let table = render_table(scenario, a.n, &targets, &method_fits, cs.as_ref().map(|c| &c.0));
    std::fs::write(a.out.join(format!("table_{id}.csv")), table.to_csv())?;
    std::fs::write(a.out.join(format!("timing_{id}.csv")), timing_report(&timings)?)?;
    write_densities(&a.out, &id, &sample, &fits, cs.as_ref())?;

    let ok = checks.iter().all(|c| c.status != "fail");
    let report = CheckReport { table: &id, scenario, n: a.n, seed: a.seed, tolerance: tol, ok, checks: &checks };
    std::fs::write(a.out.join(format!("checks_{id}.json")), serde_json::to_string_pretty(&report)? + "\n")?;
    for c in &checks {
        let shown = match (c.estimate, c.lo, c.hi) {
            (Some(e), _, _) => format!("{e:.4}"),
            (None, Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
            _ => "empty".into(),
        };
        println!("{:<10} {:<10} {:>22}  target {:>8.4}  {}", c.method, c.param, shown, c.target, c.status);
    }
    println!("table {id}: {}", if ok { "ok" } else { "FAILED" });
    Ok(())
}

fn write_densities(
    out: &Path,
    id: &str,
    sample: &Sample64,
    fits: &[(String, Fit)],
    cs: Option<&(ConfidenceSet64, Vec<usize>)>,
) -> Result<()> {
    let data = &sample.data;
    let mut named: Vec<(String, ReturnsDistribution64)> = Vec::new();
    for (label, fit) in fits {
        let rd = match fit {
            Fit::Probit(p) => probit_returns(p, data)?,
            Fit::Cf(c) => cf_returns(c, data)?,
        };
        named.push((label.clone(), rd));
    }
    let refs: Vec<&ReturnsDistribution64> = named.iter().map(|(_, r)| r).collect();
    let support = default_support(&refs, DEFAULT_SUPPORT_POINTS);
    for (label, rd) in &named {
        write_dat(&out.join(format!("density_{id}_{label}.dat")), &support, &pooled_density(rd, &support)?)?;
    }
    if let Some(h) = &sample.hidden {
        let kde = latent_kde(h.pi.as_slice())?;
        write_dat(&out.join(format!("density_{id}_latent.dat")), &support, &pooled_density(&kde, &support)?)?;
    }
    if let Some((set, cols)) = cs {
        if !set.is_empty() {
            let fam = mi_returns_bounds(set, data, cols, &perceived_returns::mi::DEFAULT_PHI_GRID)?;
            let members: Vec<&ReturnsDistribution64> = fam.iter().map(|m| &m.returns).collect();
            let (lo, hi) = envelope(&members, &support)?;
            write_dat(&out.join(format!("density_{id}_mi_lo.dat")), &support, &lo)?;
            write_dat(&out.join(format!("density_{id}_mi_hi.dat")), &support, &hi)?;
        }
    }
    Ok(())
}
