//! Simulated populations for the built-in scenarios and user-defined designs.
//!
//! A scenario draws `(z₁..z_p, u, ν, ε̃) ~ N(0, Σ)` and sets
//!
//! ```text
//! Price          = δ₀ + Σⱼ δⱼ zⱼ + u
//! PerceivedPrice = Price + ν
//! π̃              = Xβ − PerceivedPrice + ε̃,     S = 1{π̃ ≥ 0}
//! ```
//!
//! with `X = [1, x_extra…]`, the extra covariates drawn independently as
//! `N(0, var)`, and the instrument matrix `Z = [X, z₁..z_p]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, HiddenLatent, Sample};
use crate::scalar::Real;
use crate::stats::{cholesky, mvn_sample, CovarianceMatrix, RngStream};

/// Full description of a simulated population.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub label: String,
    /// Joint covariance of `(z₁..z_p, u, ν, ε̃)` in that order.
    pub sigma_joint: CovarianceMatrix<f64>,
    /// Coefficients on `[1, x_extra…]`; equal to `θ` since misperceptions
    /// carry no systematic component in these designs.
    pub beta: Vec<f64>,
    /// First-stage coefficients on `[1, z₁..z_p]`.
    pub delta: Vec<f64>,
    /// Variances of additional independent covariates.
    pub x_extra: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
}

impl DgpSpec {
    pub fn new(
        label: impl Into<String>,
        sigma: &[Vec<f64>],
        beta: Vec<f64>,
        delta: Vec<f64>,
        x_extra: Vec<f64>,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = DgpSpec {
            label: label.into(),
            sigma_joint: CovarianceMatrix::from_rows(sigma)?,
            beta,
            delta,
            x_extra,
            n,
            seed,
            stream: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of excluded instruments `p`.
    pub fn p(&self) -> usize {
        self.sigma_joint.dim().saturating_sub(3)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.sigma_joint.dim();
        if dim < 3 {
            return Err(Error::InvalidSpec("sigma must cover at least (u, nu, eps)".into()));
        }
        if self.delta.len() != 1 + self.p() {
            return Err(Error::InvalidSpec(format!(
                "delta has {} entries, expected 1 + {} instruments",
                self.delta.len(),
                self.p()
            )));
        }
        if self.beta.len() != 1 + self.x_extra.len() {
            return Err(Error::InvalidSpec("beta needs one entry for the constant plus one per x_extra".into()));
        }
        if self.x_extra.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidSpec("x_extra variances must be finite and nonnegative".into()));
        }
        if self.n < 100 {
            return Err(Error::InvalidSpec(format!("n = {} is below the minimum of 100", self.n)));
        }
        Ok(())
    }

    pub fn rng(&self) -> RngStream {
        RngStream::new(self.seed, self.stream)
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    /// Dataset `z` column holding excluded instrument `j` (0-based).
    pub fn instrument_column(&self, j: usize) -> usize {
        1 + self.x_extra.len() + j
    }

    fn idx_u(&self) -> usize {
        self.p()
    }
    fn idx_nu(&self) -> usize {
        self.p() + 1
    }
    fn idx_eps(&self) -> usize {
        self.p() + 2
    }
}

/// Population values each estimator targets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTargets {
    pub theta_true: Vec<f64>,
    pub sigma_true: f64,
    pub rho_true: f64,
    pub sigma_zeta_true: f64,
    pub sigma_eps_true: f64,
    pub sigma_xi_true: f64,
    /// Excluded-instrument indices (0-based, DGP order) the targets assume.
    pub instruments: Vec<usize>,
}

/// Draws a sample from `spec`.
pub fn generate<T: Real>(spec: &DgpSpec) -> Result<Sample<T>> {
    spec.validate()?;
    let n = spec.n;
    let p = spec.p();
    let sigma = CovarianceMatrix::<T>::new(spec.sigma_joint.entries().map(T::of))?;
    let l = cholesky(&sigma)?;
    let mut rng = spec.rng();
    let joint = mvn_sample(&l, n, &mut rng);
    let extras: Vec<DVector<T>> = spec
        .x_extra
        .iter()
        .map(|&var| {
            let sd = T::of(var.sqrt());
            DVector::from_fn(n, |_, _| sd * rng.standard_normal::<T>())
        })
        .collect();

    let k = 1 + extras.len();
    let m = k + p;
    let mut x = DMatrix::<T>::from_element(n, k, T::one());
    for (j, col) in extras.iter().enumerate() {
        x.set_column(j + 1, col);
    }
    let mut z = DMatrix::<T>::zeros(n, m);
    for j in 0..k {
        z.set_column(j, &x.column(j));
    }
    for j in 0..p {
        z.set_column(k + j, &joint.column(j));
    }

    let beta: Vec<T> = spec.beta.iter().map(|&b| T::of(b)).collect();
    let delta: Vec<T> = spec.delta.iter().map(|&d| T::of(d)).collect();
    let u = joint.column(spec.idx_u()).into_owned();
    let nu = joint.column(spec.idx_nu()).into_owned();
    let eps = joint.column(spec.idx_eps()).into_owned();
    let mut price = DVector::<T>::zeros(n);
    let mut pi = DVector::<T>::zeros(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let mut pr = delta[0] + u[i];
        for j in 0..p {
            pr += delta[j + 1] * joint[(i, j)];
        }
        let mut xb = T::zero();
        for j in 0..k {
            xb += x[(i, j)] * beta[j];
        }
        let latent = xb - (pr + nu[i]) + eps[i];
        price[i] = pr;
        pi[i] = latent;
        s.push(latent >= T::zero());
    }
    let data = Dataset::new(s, price, x, z)?;
    Sample::new(data, Some(HiddenLatent { u, nu, eps, pi }))
}

/// Covariance arithmetic for the population targets when the first stage
/// uses the excluded instruments in `instrument_subset`.
///
/// Instruments left out of the first stage are folded into the effective
/// residual `u_eff` (the population residual of price on the used ones).
pub fn analytic_targets(spec: &DgpSpec, instrument_subset: &[usize]) -> Result<ScenarioTargets> {
    let p = spec.p();
    let dim = p + 3;
    if let Some(&bad) = instrument_subset.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidSpec(format!("instrument {bad} out of range (p = {p})")));
    }
    let s = spec.sigma_joint.entries();
    let unit = |i: usize| DVector::<f64>::from_fn(dim, |r, _| if r == i { 1.0 } else { 0.0 });

    let composite = unit(spec.idx_eps()) - unit(spec.idx_nu());
    let mut price_part = unit(spec.idx_u());
    for j in 0..p {
        price_part[j] += spec.delta[j + 1];
    }

    // project the stochastic part of price on the used instruments
    let used = instrument_subset;
    let mut u_eff = price_part.clone();
    if !used.is_empty() {
        let sub = DMatrix::from_fn(used.len(), used.len(), |a, b| s[(used[a], used[b])]);
        let rhs = DVector::from_fn(used.len(), |a, _| (s.row(used[a]) * &price_part)[(0, 0)]);
        let sub_inv = linalg::spd_inverse(&sub)
            .map_err(|_| Error::InvalidSpec("instrument covariance is singular".into()))?;
        let coef = sub_inv * rhs;
        for (a, &j) in used.iter().enumerate() {
            u_eff[j] -= coef[a];
        }
    }

    let cov = &spec.sigma_joint;
    let var_u = cov.bilinear(&u_eff, &u_eff);
    if var_u <= 1e-12 {
        return Err(Error::DegenerateResidual);
    }
    let var_c = cov.bilinear(&composite, &composite);
    let rho = cov.bilinear(&u_eff, &composite) / var_u;
    let xi = &composite - &u_eff * rho;
    Ok(ScenarioTargets {
        theta_true: spec.beta.clone(),
        sigma_true: var_c.sqrt(),
        rho_true: rho,
        sigma_zeta_true: (var_c - rho * rho * var_u).max(0.0).sqrt(),
        sigma_eps_true: s[(spec.idx_eps(), spec.idx_eps())].sqrt(),
        sigma_xi_true: cov.bilinear(&xi, &xi).max(0.0).sqrt(),
        instruments: used.to_vec(),
    })
}

impl DgpSpec {
    fn composite(&self) -> DVector<f64> {
        let dim = self.p() + 3;
        DVector::from_fn(dim, |r, _| {
            if r == self.idx_eps() {
                1.0
            } else if r == self.idx_nu() {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Whether price co-moves with `−ν + ε̃`; the probit is biased when it does.
    pub fn price_endogenous(&self) -> bool {
        let mut price = DVector::from_fn(self.p() + 3, |r, _| if r == self.idx_u() { 1.0 } else { 0.0 });
        for j in 0..self.p() {
            price[j] = self.delta[j + 1];
        }
        self.sigma_joint.bilinear(&price, &self.composite()).abs() > 1e-12
    }

    /// Excluded instrument `j` is uncorrelated with `−ν + ε̃`.
    pub fn instrument_valid(&self, j: usize) -> bool {
        let c = self.composite();
        (0..self.p() + 3).map(|r| self.sigma_joint.get(j, r) * c[r]).sum::<f64>().abs() <= 1e-12
    }

    /// The σ the moment-inequality set is judged against: `σ_ε̃` when price
    /// errors are independent of `ε̃`, otherwise the residual scale `σ_ξ`.
    pub fn mi_sigma_target(&self, targets: &ScenarioTargets) -> f64 {
        let s = self.sigma_joint.entries();
        if s[(self.idx_u(), self.idx_eps())] != 0.0 || s[(self.idx_nu(), self.idx_eps())] != 0.0 {
            targets.sigma_xi_true
        } else {
            targets.sigma_eps_true
        }
    }
}

/// Names accepted by [`builtin_scenario`].
pub const SCENARIO_NAMES: [&str; 9] = ["sim1", "sim2", "A1", "A2", "A3", "A4", "A5", "A6", "A7"];

fn diag4(d: [f64; 4]) -> Vec<Vec<f64>> {
    (0..4).map(|i| (0..4).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect()
}

fn appendix_a5_sigma() -> Vec<Vec<f64>> {
    vec![
        vec![4.0, 0.0, 0.0, 0.0],
        vec![0.0, 7.0, -3.0, 4.0],
        vec![0.0, -3.0, 12.0, 0.0],
        vec![0.0, 4.0, 0.0, 4.0],
    ]
}

const DEFAULT_N: usize = 10_000;
const DEFAULT_SEED: u64 = 1234;

/// One built-in scenario by name (`sim1`, `sim2`, `A1`..`A7`; the forms
/// `A.1` and `a1` are accepted too).
pub fn builtin_scenario(name: &str) -> Result<(DgpSpec, ScenarioTargets)> {
    let key = name.replace('.', "").to_ascii_uppercase();
    let (label, sigma, beta, delta, x_extra, instruments): (&str, Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>) =
        match key.as_str() {
            "SIM1" => ("sim1", diag4([4.0, 1.0, 2.0, 2.0]), vec![1.0], vec![0.0, 1.0], vec![], vec![0]),
            "SIM2" => (
                "sim2",
                vec![
                    vec![9.0, 0.0, 0.0, -4.0, 0.0],
                    vec![0.0, 9.0, 0.0, 0.0, 0.0],
                    vec![0.0, 0.0, 27.0, -5.0, 9.0],
                    vec![-4.0, 0.0, -5.0, 9.0, 0.0],
                    vec![0.0, 0.0, 9.0, 0.0, 16.0],
                ],
                vec![1.0],
                vec![0.0, 1.0, 1.0],
                vec![],
                vec![1],
            ),
            "A1" => ("A1", diag4([4.0, 1.0, 0.0, 4.0]), vec![1.0], vec![0.0, 1.0], vec![], vec![0]),
            "A2" => (
                "A2",
                vec![
                    vec![4.0, 0.0, 0.0, 0.0],
                    vec![0.0, 7.0, -7.0, 0.0],
                    vec![0.0, -7.0, 12.0, 0.0],
                    vec![0.0, 0.0, 0.0, 4.0],
                ],
                vec![1.0],
                vec![0.0, 1.0],
                vec![],
                vec![0],
            ),
            // positive selection: the covariance of 7 sits between u and ε̃
            "A3" => (
                "A3",
                vec![
                    vec![4.0, 0.0, 0.0, 0.0],
                    vec![0.0, 7.0, 0.0, 7.0],
                    vec![0.0, 0.0, 0.0, 0.0],
                    vec![0.0, 7.0, 0.0, 16.0],
                ],
                vec![1.0],
                vec![0.0, 1.0],
                vec![],
                vec![0],
            ),
            "A4" => (
                "A4",
                vec![
                    vec![4.0, 0.0, 0.0, 0.0],
                    vec![0.0, 20.0, 0.0, -10.0],
                    vec![0.0, 0.0, 0.0, 0.0],
                    vec![0.0, -10.0, 0.0, 9.0],
                ],
                vec![1.0],
                vec![0.0, 1.0],
                vec![],
                vec![0],
            ),
            "A5" => ("A5", appendix_a5_sigma(), vec![1.0], vec![0.0, 1.0], vec![], vec![0]),
            "A6" => ("A6", appendix_a5_sigma(), vec![1.0, 0.0], vec![0.0, 1.0], vec![4.0], vec![0]),
            "A7" => ("A7", appendix_a5_sigma(), vec![1.0, 0.0, 0.0], vec![0.0, 1.0], vec![4.0, 4.0], vec![0]),
            _ => return Err(Error::UnknownScenario(name.to_string())),
        };
    let spec = DgpSpec::new(label, &sigma, beta, delta, x_extra, DEFAULT_N, DEFAULT_SEED)?;
    let targets = analytic_targets(&spec, &instruments)?;
    Ok((spec, targets))
}

/// All nine built-in scenarios in [`SCENARIO_NAMES`] order.
pub fn builtin_scenarios() -> Vec<(DgpSpec, ScenarioTargets)> {
    SCENARIO_NAMES
        .iter()
        .map(|name| builtin_scenario(name).expect("built-in scenario is valid"))
        .collect()
}

/// On-disk scenario definition (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub label: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default)]
    pub x_extra: Vec<f64>,
    /// Excluded instruments (0-based) used for targets and estimation;
    /// defaults to all of them.
    #[serde(default)]
    pub instruments: Option<Vec<usize>>,
}

impl ScenarioFile {
    pub fn into_spec(self) -> Result<(DgpSpec, ScenarioTargets)> {
        let mut spec = DgpSpec::new(self.label, &self.sigma, self.beta, self.delta, self.x_extra, self.n, self.seed)?;
        spec.stream = self.stream;
        let instruments = self.instruments.unwrap_or_else(|| (0..spec.p()).collect());
        let targets = analytic_targets(&spec, &instruments)?;
        Ok((spec, targets))
    }

    pub fn from_spec(spec: &DgpSpec, targets: &ScenarioTargets) -> Self {
        let dim = spec.sigma_joint.dim();
        ScenarioFile {
            label: spec.label.clone(),
            n: spec.n,
            seed: spec.seed,
            stream: spec.stream,
            beta: spec.beta.clone(),
            delta: spec.delta.clone(),
            sigma: (0..dim).map(|i| (0..dim).map(|j| spec.sigma_joint.get(i, j)).collect()).collect(),
            x_extra: spec.x_extra.clone(),
            instruments: Some(targets.instruments.clone()),
        }
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json)
    }
}

/// Resolves a built-in name or a scenario file path.
pub fn resolve_scenario(name_or_path: &str) -> Result<(DgpSpec, ScenarioTargets)> {
    match builtin_scenario(name_or_path) {
        Ok(found) => Ok(found),
        Err(Error::UnknownScenario(_)) if Path::new(name_or_path).exists() => {
            ScenarioFile::load(Path::new(name_or_path))?.into_spec()
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_covariance;
    use approx::assert_abs_diff_eq;

    #[test]
    fn transcribed_covariances() {
        let (sim2, _) = builtin_scenario("sim2").unwrap();
        let s = sim2.sigma_joint.entries();
        // z1 z2 u nu eps
        assert_eq!(s[(2, 2)], 27.0);
        assert_eq!(s[(2, 3)], -5.0);
        assert_eq!(s[(2, 4)], 9.0);
        assert_eq!(s[(3, 3)], 9.0);
        assert_eq!(s[(0, 3)], -4.0);
        assert_eq!(s[(4, 4)], 16.0);
        let (a4, _) = builtin_scenario("A.4").unwrap();
        let s = a4.sigma_joint.entries();
        assert_eq!((s[(1, 1)], s[(1, 3)], s[(3, 3)], s[(2, 2)]), (20.0, -10.0, 9.0, 0.0));
        let (a1, _) = builtin_scenario("a1").unwrap();
        let s = a1.sigma_joint.entries();
        assert_eq!((s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(3, 3)]), (4.0, 1.0, 0.0, 4.0));
        assert_eq!(builtin_scenarios().len(), 9);
        assert!(matches!(builtin_scenario("A9"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn sim2_targets_by_covariance_arithmetic() {
        let (spec, t) = builtin_scenario("sim2").unwrap();
        assert_eq!(t.instruments, vec![1]);
        assert_abs_diff_eq!(t.rho_true, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.sigma_zeta_true, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.sigma_xi_true, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.sigma_true, 5.0, epsilon = 1e-12);
        // both instruments: u_eff = u
        let both = analytic_targets(&spec, &[0, 1]).unwrap();
        assert_abs_diff_eq!(both.rho_true, 14.0 / 27.0, epsilon = 1e-12);
        assert!(analytic_targets(&spec, &[2]).is_err());
    }

    #[test]
    fn validity_flags() {
        let (sim2, _) = builtin_scenario("sim2").unwrap();
        assert!(!sim2.instrument_valid(0));
        assert!(sim2.instrument_valid(1));
        assert!(sim2.price_endogenous());
        let (sim1, t1) = builtin_scenario("sim1").unwrap();
        assert!(!sim1.price_endogenous());
        assert_eq!(sim1.mi_sigma_target(&t1), t1.sigma_eps_true);
        let (a2, t2) = builtin_scenario("A2").unwrap();
        assert!(a2.price_endogenous());
        assert_eq!(a2.mi_sigma_target(&t2), t2.sigma_eps_true);
    }

    #[test]
    fn sim1_and_appendix_targets() {
        let cases = [("sim1", 2.0, 0.0, 2.0), ("A2", 4.0, 1.0, 3.0), ("A4", 3.0, -0.5, 2.0)];
        for (name, sigma, rho, sz) in cases {
            let (_, t) = builtin_scenario(name).unwrap();
            assert_abs_diff_eq!(t.sigma_true, sigma, epsilon = 1e-12);
            assert_abs_diff_eq!(t.rho_true, rho, epsilon = 1e-12);
            assert_abs_diff_eq!(t.sigma_zeta_true, sz, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_first_stage_residual() {
        let spec = DgpSpec::new(
            "no-u",
            &[vec![4.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
            vec![1.0],
            vec![0.0, 1.0],
            vec![],
            100,
            1,
        )
        .unwrap();
        assert!(matches!(analytic_targets(&spec, &[0]), Err(Error::DegenerateResidual)));
    }

    #[test]
    fn generate_is_deterministic_and_consistent() {
        let (spec, _) = builtin_scenario("sim2").unwrap();
        let spec = spec.with_n(500);
        let a: Sample<f64> = generate(&spec).unwrap();
        let b: Sample<f64> = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c: Sample<f64> = generate(&spec.clone().with_seed(1234, 1)).unwrap();
        assert_ne!(a, c);
        let h = a.hidden.as_ref().unwrap();
        for i in 0..a.data.n() {
            assert_eq!(a.data.s()[i], h.pi[i] >= 0.0);
            let recomposed = 1.0 - a.data.price()[i] - h.nu[i] + h.eps[i];
            assert_abs_diff_eq!(recomposed, h.pi[i], epsilon = 1e-12);
        }
        assert_eq!(a.data.z().ncols(), 3);
        assert_eq!(a.data.excluded_instruments(), vec![1, 2]);
    }

    #[test]
    fn sim1_selection_share_matches_quadrature() {
        // E over w = z + u ~ N(0, 5) of Φ((1 − w)/2), by the trapezoid rule
        // on ±12 sd with erfc for Φ
        let sd = 5f64.sqrt();
        let m = 20_000;
        let (lo, hi) = (-12.0 * sd, 12.0 * sd);
        let h = (hi - lo) / m as f64;
        let oracle: f64 = (0..=m)
            .map(|j| {
                let w = lo + j as f64 * h;
                let dens = (-0.5 * (w / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                let phi = 0.5 * libm::erfc(-(1.0 - w) / (2.0 * std::f64::consts::SQRT_2));
                let wt = if j == 0 || j == m { 0.5 } else { 1.0 };
                wt * dens * phi * h
            })
            .sum();
        let (spec, _) = builtin_scenario("sim1").unwrap();
        let s: Sample<f64> = generate(&spec).unwrap();
        assert!((s.data.mean_choice() - oracle).abs() <= 0.02, "{} vs {oracle}", s.data.mean_choice());
        assert!((oracle - 0.6306).abs() < 1e-3);
    }

    #[test]
    fn degenerate_design_selects_everyone() {
        let spec = DgpSpec::new(
            "always",
            &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]],
            vec![10.0],
            vec![0.0, 0.0],
            vec![],
            200,
            5,
        )
        .unwrap();
        let s: Sample<f64> = generate(&spec).unwrap();
        assert!(s.data.s().iter().all(|&v| v));
    }

    #[test]
    fn extra_covariates_layout() {
        let (spec, t) = builtin_scenario("A7").unwrap();
        assert_eq!(t.theta_true, vec![1.0, 0.0, 0.0]);
        let s: Sample<f64> = generate(&spec.with_n(300)).unwrap();
        assert_eq!(s.data.k(), 3);
        assert_eq!(s.data.m(), 4);
        assert_eq!(s.data.excluded_instruments(), vec![3]);
    }

    #[test]
    fn large_sample_hidden_covariance() {
        for (spec, _) in builtin_scenarios() {
            let s: Sample<f64> = generate(&spec.clone().with_n(200_000)).unwrap();
            let h = s.hidden.unwrap();
            let m = DMatrix::from_columns(&[h.u, h.nu, h.eps]);
            let c = sample_covariance(&m);
            let p = spec.p();
            for a in 0..3 {
                for b in 0..3 {
                    let want = spec.sigma_joint.get(p + a, p + b);
                    assert!((c[(a, b)] - want).abs() <= 0.15, "{} ({a},{b}): {} vs {want}", spec.label, c[(a, b)]);
                }
            }
        }
    }

    #[test]
    fn scenario_file_roundtrip() {
        let (spec, targets) = builtin_scenario("A6").unwrap();
        let file = ScenarioFile::from_spec(&spec, &targets);
        let text = toml::to_string(&file).unwrap();
        let back = ScenarioFile::parse(&text, false).unwrap().into_spec().unwrap();
        assert_eq!(back.0, spec);
        assert_eq!(back.1, targets);
        let json = serde_json::to_string(&file).unwrap();
        assert_eq!(ScenarioFile::parse(&json, true).unwrap(), file);
    }
}
