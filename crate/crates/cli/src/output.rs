//! JSON views of fits and confidence sets.

use perceived_returns::{CfFit64, ConfidenceSet64, Dataset64, ProbitFit64};
use serde::Serialize;

#[derive(Serialize)]
pub struct Param {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

fn theta_names(k: usize) -> Vec<String> {
    (0..k).map(|j| if j == 0 { "Constant".to_string() } else { format!("x_{j}") }).collect()
}

#[derive(Serialize)]
pub struct ProbitJson {
    pub method: &'static str,
    pub n: usize,
    pub params: Vec<Param>,
    pub theta_star: Vec<f64>,
    pub gamma_star: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub quasi_separated: bool,
    pub information: &'static str,
}

impl ProbitJson {
    pub fn new(fit: &ProbitFit64, n: usize) -> Self {
        let se = fit.std_errors();
        let mut params: Vec<Param> = theta_names(fit.theta.len())
            .into_iter()
            .enumerate()
            .map(|(j, name)| Param { name, estimate: fit.theta[j], se: se[j] })
            .collect();
        params.push(Param { name: "sigma".into(), estimate: fit.sigma, se: fit.se_sigma() });
        ProbitJson {
            method: "probit",
            n,
            params,
            theta_star: fit.theta_star.iter().copied().collect(),
            gamma_star: fit.gamma_star,
            loglik: fit.loglik,
            iterations: fit.iterations,
            converged: fit.converged,
            quasi_separated: fit.quasi_separated,
            information: perceived_returns::probit::INFORMATION_KIND,
        }
    }
}

#[derive(Serialize)]
pub struct FirstStageJson {
    pub instruments: Vec<String>,
    pub delta: Vec<f64>,
    pub sigma_u2: f64,
    pub f_stat: Option<f64>,
    pub weak_instrument: bool,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct CfJson {
    pub method: &'static str,
    pub n: usize,
    pub first_stage: FirstStageJson,
    /// Standard errors corrected for the estimated first stage.
    pub params: Vec<Param>,
    pub se_naive: Vec<f64>,
    pub rho_ratio: f64,
    pub rho_ratio_negative: bool,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub quasi_separated: bool,
}

impl CfJson {
    pub fn new(fit: &CfFit64, n: usize) -> Self {
        let k = fit.theta.len();
        let se = fit.std_errors();
        let mut names = theta_names(k);
        names.push("sigma_zeta".into());
        names.push("rho".into());
        let est: Vec<f64> = fit.theta.iter().copied().chain([fit.sigma_zeta, fit.rho]).collect();
        let fs = &fit.first_stage;
        CfJson {
            method: "cf",
            n,
            first_stage: FirstStageJson {
                instruments: fs.instrument_columns.iter().map(|&c| Dataset64::z_name(c)).collect(),
                delta: fs.delta_hat.iter().copied().collect(),
                sigma_u2: fs.sigma_u2,
                f_stat: fs.f_stat,
                weak_instrument: fs.weak_instrument(),
                warnings: fs.warnings.clone(),
            },
            params: names.into_iter().enumerate().map(|(j, name)| Param { name, estimate: est[j], se: se[j] }).collect(),
            se_naive: fit.std_errors_naive().iter().copied().collect(),
            rho_ratio: fit.rho_ratio(),
            rho_ratio_negative: fit.rho_ratio_negative(),
            loglik: fit.loglik,
            iterations: fit.iterations,
            converged: fit.converged,
            quasi_separated: fit.quasi_separated,
        }
    }
}

#[derive(Serialize)]
pub struct PointJson {
    pub theta: Vec<f64>,
    pub sigma_eps: f64,
    pub q: f64,
    pub critical: f64,
}

#[derive(Serialize)]
pub struct BoundJson {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Serialize)]
pub struct MiJson {
    pub method: &'static str,
    pub n: usize,
    pub alpha: f64,
    pub seed: u64,
    pub instruments: Vec<String>,
    pub bounds: Vec<BoundJson>,
    pub grid_step: Vec<f64>,
    pub runtime_seconds: f64,
    pub accepted: Vec<PointJson>,
    pub diagnostics: perceived_returns::mi::MiDiagnostics,
}

impl MiJson {
    pub fn new(cs: &ConfidenceSet64, n: usize, seed: u64, instruments: &[usize]) -> Self {
        let mut names = match cs.accepted.first() {
            Some(p) => theta_names(p.psi.theta.len()),
            None => Vec::new(),
        };
        names.push("sigma_eps".into());
        let bounds = cs
            .bounds()
            .map(|b| b.iter().zip(&names).map(|(&(lo, hi), name)| BoundJson { name: name.clone(), lo, hi }).collect())
            .unwrap_or_default();
        MiJson {
            method: "mi",
            n,
            alpha: cs.alpha,
            seed,
            instruments: instruments.iter().map(|&c| Dataset64::z_name(c)).collect(),
            bounds,
            grid_step: cs.grid_step.clone(),
            runtime_seconds: cs.runtime_seconds,
            accepted: cs
                .accepted
                .iter()
                .map(|p| PointJson { theta: p.psi.theta.iter().copied().collect(), sigma_eps: p.psi.sigma_eps, q: p.q, critical: p.critical })
                .collect(),
            diagnostics: cs.diagnostics.clone(),
        }
    }
}
