//! Two-step control-function estimator.
//!
//! Stage one projects price on the covariates and the chosen excluded
//! instruments. Stage two is the constrained probit with the first-stage
//! residual `û` added to the index, which absorbs the part of the error
//! correlated with price. Because `û` is estimated, the second-stage
//! covariance is corrected following Murphy and Topel.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::index_mle::{self, IndexDesign, LogLik};
use crate::linalg::{self, least_squares};
use crate::model::{Dataset, LatentModelParams, ReturnsDistribution, ReturnsKind};
use crate::probit::{structural_jacobian, to_structural, FitOptions};
use crate::scalar::Real;

/// Conventional rule-of-thumb threshold on the first-stage F statistic.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageFit<T: Real> {
    /// Coefficients on the columns of `z` listed in `instrument_columns`.
    pub delta_hat: DVector<T>,
    pub residuals: DVector<T>,
    /// `σ̂²_u (WᵀW)⁻¹`.
    pub vcov_delta: DMatrix<T>,
    /// `RSS / (n − p)`.
    pub sigma_u2: T,
    /// Columns of `z` used as regressors: the `x` columns first, then the
    /// excluded instruments.
    pub instrument_columns: Vec<usize>,
    /// The excluded instruments among `instrument_columns`.
    pub excluded: Vec<usize>,
    /// F statistic for the excluded instruments; `None` when there are none.
    pub f_stat: Option<T>,
    pub warnings: Vec<String>,
}

impl<T: Real> FirstStageFit<T> {
    pub fn weak_instrument(&self) -> bool {
        self.f_stat.is_some_and(|f| f < T::of(WEAK_INSTRUMENT_F))
    }

    /// Regressor matrix `W` of the first stage.
    pub fn design(&self, data: &Dataset<T>) -> DMatrix<T> {
        select_columns(data.z(), &self.instrument_columns)
    }

    /// Fitted prices `Wδ̂`.
    pub fn fitted(&self, data: &Dataset<T>) -> DVector<T> {
        self.design(data) * &self.delta_hat
    }
}

fn select_columns<T: Real>(z: &DMatrix<T>, cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(z.nrows(), cols.len(), |i, j| z[(i, cols[j])])
}

fn rss<T: Real>(r: &DVector<T>) -> T {
    r.iter().map(|&v| v * v).sum()
}

/// OLS of price on the `x` columns plus the excluded instruments listed in
/// `instruments` (0-based columns of `z`; entries that are `x` columns are
/// ignored).
pub fn fit_first_stage<T: Real>(data: &Dataset<T>, instruments: &[usize]) -> Result<FirstStageFit<T>> {
    let n = data.n();
    let mut cols: Vec<usize> = data.x_columns_in_z().to_vec();
    let mut excluded = Vec::new();
    for &c in instruments {
        if c >= data.m() {
            return Err(Error::InvalidSpec(format!("instrument column {} out of range (z has {} columns)", c + 1, data.m())));
        }
        if !cols.contains(&c) {
            cols.push(c);
            excluded.push(c);
        }
    }
    let p = cols.len();
    if n <= p {
        return Err(Error::InvalidSample(format!("first stage has {p} regressors but only {n} rows")));
    }
    let w = select_columns(data.z(), &cols);
    let (delta, wtw_inv) = least_squares(&w, data.price())
        .map_err(|j| Error::RankDeficient { column: Dataset::<T>::z_name(cols[j]) })?;
    let residuals = data.price() - &w * &delta;
    let rss_u = rss(&residuals);
    let sigma_u2 = rss_u / T::of((n - p) as f64);
    let vcov_delta = &wtw_inv * sigma_u2;

    let mut warnings = Vec::new();
    let f_stat = if excluded.is_empty() {
        None
    } else {
        let k = data.k();
        let wr = select_columns(data.z(), &cols[..k]);
        let (dr, _) = least_squares(&wr, data.price())
            .map_err(|j| Error::RankDeficient { column: Dataset::<T>::z_name(cols[j]) })?;
        let rss_r = rss(&(data.price() - &wr * dr));
        let q = T::of(excluded.len() as f64);
        let f = if rss_u > T::zero() {
            ((rss_r - rss_u) / q) / sigma_u2
        } else {
            T::infinity()
        };
        if f < T::of(WEAK_INSTRUMENT_F) {
            warnings.push(format!("weak instruments: first-stage F = {f:.3} < {WEAK_INSTRUMENT_F}"));
        }
        Some(f)
    };

    Ok(FirstStageFit {
        delta_hat: delta,
        residuals,
        vcov_delta,
        sigma_u2,
        instrument_columns: cols,
        excluded,
        f_stat,
        warnings,
    })
}

fn cf_design<T: Real>(data: &Dataset<T>, u_hat: &DVector<T>) -> IndexDesign<T> {
    let k = data.k();
    let mut v = DMatrix::<T>::zeros(data.n(), k + 2);
    v.columns_mut(0, k).copy_from(data.x());
    v.set_column(k, &(-data.price()));
    v.set_column(k + 1, u_hat);
    IndexDesign { v, s: data.s().to_vec(), positive_col: k }
}

/// Log-likelihood in `(θ*, γ*, ρ*)` for the index `Xθ* − Price·γ* + û·ρ*`.
pub fn cf_loglik<T: Real>(theta_star: &DVector<T>, gamma_star: T, rho_star: T, data: &Dataset<T>, u_hat: &DVector<T>) -> LogLik<T> {
    let k = data.k();
    let mut b = DVector::<T>::zeros(k + 2);
    b.rows_mut(0, k).copy_from(theta_star);
    b[k] = gamma_star;
    b[k + 1] = rho_star;
    cf_design(data, u_hat).loglik(&b)
}

/// Second-stage maximizer in raw coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CfRaw<T: Real> {
    pub theta_star: DVector<T>,
    pub gamma_star: T,
    pub rho_star: T,
    pub loglik: LogLik<T>,
    pub iterations: usize,
    pub converged: bool,
    pub quasi_separated: bool,
}

impl<T: Real> CfRaw<T> {
    fn coefficients(&self) -> DVector<T> {
        let k = self.theta_star.len();
        let mut b = DVector::<T>::zeros(k + 2);
        b.rows_mut(0, k).copy_from(&self.theta_star);
        b[k] = self.gamma_star;
        b[k + 1] = self.rho_star;
        b
    }
}

/// Maximizes the second-stage likelihood for a given control `û`, starting
/// from the probit-style values with `ρ* = 0`.
pub fn maximize_cf_loglik<T: Real>(data: &Dataset<T>, u_hat: &DVector<T>, opts: &FitOptions) -> Result<CfRaw<T>> {
    if u_hat.len() != data.n() {
        return Err(Error::InvalidSample("control length differs from n".into()));
    }
    index_mle::check_price_variation(data.price())?;
    let k = data.k();
    let design = cf_design(data, u_hat);
    let start = design.start(k + 1)?;
    let gamma0 = start[k];
    let res = index_mle::maximize(&design, start, opts.max_iter, opts.tol());
    Ok(CfRaw {
        theta_star: res.b.rows(0, k).into_owned(),
        gamma_star: res.b[k],
        rho_star: res.b[k + 1],
        quasi_separated: index_mle::looks_separated(&res, gamma0, k),
        loglik: res.loglik,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// Two-step covariance `V₂ + V₂(C V₁ Cᵀ − R V₁ Cᵀ − C V₁ Rᵀ)V₂`.
///
/// `info2` is the negative second-stage Hessian, `cross` is
/// `C = −Σ ∂²ℓ₂/∂ψ₂∂ψ₁ᵀ` and `r = Σ s₂ s₁ᵀ`, all as sums over observations;
/// `v1` is the first-stage covariance.
pub fn mt_correct<T: Real>(info2: &DMatrix<T>, v1: &DMatrix<T>, cross: &DMatrix<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let v2 = linalg::spd_inverse(info2).map_err(|_| Error::Singular("second-stage information matrix".into()))?;
    let inner = cross * v1 * cross.transpose() - r * v1 * cross.transpose() - cross * v1 * r.transpose();
    Ok(linalg::symmetrize(&(&v2 + &v2 * inner * &v2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfFit<T: Real> {
    pub first_stage: FirstStageFit<T>,
    pub theta: DVector<T>,
    pub rho: T,
    pub sigma_zeta: T,
    pub theta_star: DVector<T>,
    pub gamma_star: T,
    pub rho_star: T,
    /// Corrected covariance of `(θ, σ_ζ, ρ)`.
    pub vcov_mt: DMatrix<T>,
    /// Covariance of `(θ, σ_ζ, ρ)` treating `û` as known.
    pub vcov_naive: DMatrix<T>,
    pub loglik: T,
    pub iterations: usize,
    pub converged: bool,
    pub quasi_separated: bool,
}

impl<T: Real> CfFit<T> {
    fn se(v: &DMatrix<T>) -> DVector<T> {
        v.diagonal().map(|x| x.max(T::zero()).sqrt())
    }

    /// Corrected standard errors of `(θ, σ_ζ, ρ)`.
    pub fn std_errors(&self) -> DVector<T> {
        Self::se(&self.vcov_mt)
    }

    pub fn std_errors_naive(&self) -> DVector<T> {
        Self::se(&self.vcov_naive)
    }

    /// `ρ/(1−ρ)`; negative values mean endogeneity and misperception pull in
    /// opposite directions.
    pub fn rho_ratio(&self) -> T {
        self.rho / (T::one() - self.rho)
    }

    pub fn rho_ratio_negative(&self) -> bool {
        self.rho_ratio() < T::zero()
    }

    pub fn params(&self) -> LatentModelParams<T> {
        LatentModelParams { theta: self.theta.clone(), sigma: self.sigma_zeta, rho: self.rho, sigma_zeta: self.sigma_zeta }
    }
}

fn residual_is_degenerate<T: Real>(u: &DVector<T>, price: &DVector<T>) -> bool {
    let n = T::of(u.len() as f64);
    let var_u = rss(u) / n;
    let mean_p = price.sum() / n;
    let var_p = price.iter().map(|&p| (p - mean_p) * (p - mean_p)).sum::<T>() / n;
    !(var_u > T::of(1e-20) * (T::one() + var_p))
}

pub fn fit_cf<T: Real>(data: &Dataset<T>, instruments: &[usize], opts: &FitOptions) -> Result<CfFit<T>> {
    let fs = fit_first_stage(data, instruments)?;
    fit_cf_with_first_stage(data, fs, opts)
}

/// Second stage and covariance correction for a given first stage.
pub fn fit_cf_with_first_stage<T: Real>(data: &Dataset<T>, fs: FirstStageFit<T>, opts: &FitOptions) -> Result<CfFit<T>> {
    if residual_is_degenerate(&fs.residuals, data.price()) {
        return Err(Error::DegenerateResidual);
    }
    let raw = maximize_cf_loglik(data, &fs.residuals, opts)?;
    let k = data.k();
    let b = raw.coefficients();
    let info2 = -&raw.loglik.hessian;
    let design = cf_design(data, &fs.residuals);
    let (g, h) = design.obs_derivatives(&b);
    let w = fs.design(data);
    let p1 = w.ncols();
    let p2 = k + 2;
    let rho_star = raw.rho_star;
    let inv_s2 = T::one() / fs.sigma_u2;
    let mut cross = DMatrix::<T>::zeros(p2, p1);
    let mut r = DMatrix::<T>::zeros(p2, p1);
    for i in 0..data.n() {
        let ui = fs.residuals[i];
        for c in 0..p1 {
            let wc = w[(i, c)];
            for a in 0..p2 {
                let va = design.v[(i, a)];
                // −∂²ℓ₂ᵢ/∂bₐ∂δ_c, using ∂ûᵢ/∂δ = −Wᵢ
                cross[(a, c)] += rho_star * h[i] * va * wc;
                r[(a, c)] += g[i] * va * wc * ui * inv_s2;
            }
            cross[(k + 1, c)] += g[i] * wc;
        }
    }
    let raw_mt = mt_correct(&info2, &fs.vcov_delta, &cross, &r)?;
    let raw_naive = linalg::spd_inverse(&info2)?;
    let jac = structural_jacobian(&b, k);
    let vcov_mt = linalg::symmetrize(&(&jac * raw_mt * jac.transpose()));
    let vcov_naive = linalg::symmetrize(&(&jac * raw_naive * jac.transpose()));
    let st = to_structural(&b, k);
    Ok(CfFit {
        theta: st.rows(0, k).into_owned(),
        sigma_zeta: st[k],
        rho: st[k + 1],
        theta_star: raw.theta_star,
        gamma_star: raw.gamma_star,
        rho_star: raw.rho_star,
        vcov_mt,
        vcov_naive,
        loglik: raw.loglik.value,
        iterations: raw.iterations,
        converged: raw.converged,
        quasi_separated: raw.quasi_separated,
        first_stage: fs,
    })
}

/// Per-row `N(Xᵢθ̂ − Priceᵢ + ûᵢρ̂, σ̂²_ζ)`.
pub fn cf_returns<T: Real>(fit: &CfFit<T>, data: &Dataset<T>) -> Result<ReturnsDistribution<T>> {
    if !fit.converged {
        return Err(Error::Domain("control-function fit did not converge".into()));
    }
    let u = &fit.first_stage.residuals;
    let location = (0..data.n())
        .map(|i| data.x_dot(i, &fit.theta) - data.price()[i] + u[i] * fit.rho)
        .collect();
    ReturnsDistribution::new(location, fit.sigma_zeta, ReturnsKind::ControlFunction)
}
