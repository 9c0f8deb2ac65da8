//! Probit with the price coefficient pinned to −1 in monetary units.
//!
//! The likelihood is the ordinary probit in `(θ*, γ*) = (θ/σ, 1/σ)` on
//! regressors `(X, −Price)`. What changes is the reading of the estimate:
//! since the true price coefficient is −1, the fitted coefficient on price
//! identifies the error scale, `σ = 1/γ*`, and `θ = θ*/γ*`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::index_mle::{self, IndexDesign, LogLik};
use crate::linalg;
use crate::model::{Dataset, LatentModelParams, ReturnsDistribution, ReturnsKind};
use crate::scalar::Real;

/// Optimizer settings shared by the maximum-likelihood estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Gradient max-norm for convergence; `None` uses the scalar's default.
    pub grad_tol: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 200, grad_tol: None }
    }
}

impl FitOptions {
    pub(crate) fn tol<T: Real>(&self) -> T {
        T::of(self.grad_tol.unwrap_or(T::GRAD_TOL))
    }
}

/// Which information matrix the reported standard errors come from.
pub const INFORMATION_KIND: &str = "observed";

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitFit<T: Real> {
    pub theta_star: DVector<T>,
    pub gamma_star: T,
    pub theta: DVector<T>,
    pub sigma: T,
    /// Covariance of `(θ, σ)`.
    pub vcov_structural: DMatrix<T>,
    pub loglik: T,
    pub iterations: usize,
    pub converged: bool,
    /// The fit is (nearly) perfect or γ* ran off far beyond its start.
    pub quasi_separated: bool,
}

impl<T: Real> ProbitFit<T> {
    /// Standard errors of `(θ, σ)`.
    pub fn std_errors(&self) -> DVector<T> {
        self.vcov_structural.diagonal().map(|v| v.max(T::zero()).sqrt())
    }

    pub fn se_sigma(&self) -> T {
        self.std_errors()[self.theta.len()]
    }

    pub fn params(&self) -> LatentModelParams<T> {
        LatentModelParams { theta: self.theta.clone(), sigma: self.sigma, rho: T::zero(), sigma_zeta: self.sigma }
    }
}

pub(crate) fn probit_design<T: Real>(data: &Dataset<T>) -> IndexDesign<T> {
    let k = data.k();
    let mut v = DMatrix::<T>::zeros(data.n(), k + 1);
    v.columns_mut(0, k).copy_from(data.x());
    v.set_column(k, &(-data.price()));
    IndexDesign { v, s: data.s().to_vec(), positive_col: k }
}

/// Log-likelihood in `(θ*, γ*)` with gradient and Hessian ordered the same way.
pub fn probit_loglik<T: Real>(theta_star: &DVector<T>, gamma_star: T, data: &Dataset<T>) -> LogLik<T> {
    let design = probit_design(data);
    let mut b = DVector::<T>::zeros(data.k() + 1);
    b.rows_mut(0, data.k()).copy_from(theta_star);
    b[data.k()] = gamma_star;
    design.loglik(&b)
}

/// Jacobian of `(θ, σ[, ρ])` with respect to `(θ*, γ*[, ρ*])`.
pub(crate) fn structural_jacobian<T: Real>(b: &DVector<T>, k: usize) -> DMatrix<T> {
    let p = b.len();
    let gamma = b[k];
    let inv = T::one() / gamma;
    let inv2 = inv * inv;
    let mut j = DMatrix::<T>::zeros(p, p);
    for r in 0..p {
        if r == k {
            j[(k, k)] = -inv2;
        } else {
            j[(r, r)] = inv;
            j[(r, k)] = -b[r] * inv2;
        }
    }
    j
}

pub(crate) fn to_structural<T: Real>(b: &DVector<T>, k: usize) -> DVector<T> {
    let gamma = b[k];
    DVector::from_fn(b.len(), |r, _| if r == k { T::one() / gamma } else { b[r] / gamma })
}

pub fn fit_probit<T: Real>(data: &Dataset<T>, opts: &FitOptions) -> Result<ProbitFit<T>> {
    index_mle::check_price_variation(data.price())?;
    let k = data.k();
    let design = probit_design(data);
    let start = design.start(k + 1)?;
    let gamma0 = start[k];
    let res = index_mle::maximize(&design, start, opts.max_iter, opts.tol());
    let raw_vcov = linalg::spd_inverse(&(-&res.loglik.hessian))
        .map_err(|_| Error::Singular("probit information matrix is not positive definite".into()))?;
    let jac = structural_jacobian(&res.b, k);
    let vcov = linalg::symmetrize(&(&jac * raw_vcov * jac.transpose()));
    let structural = to_structural(&res.b, k);
    Ok(ProbitFit {
        theta_star: res.b.rows(0, k).into_owned(),
        gamma_star: res.b[k],
        theta: structural.rows(0, k).into_owned(),
        sigma: structural[k],
        vcov_structural: vcov,
        loglik: res.loglik.value,
        iterations: res.iterations,
        converged: res.converged,
        quasi_separated: index_mle::looks_separated(&res, gamma0, k),
    })
}

/// Per-row `N(Xᵢθ̂ − Priceᵢ, σ̂²)`.
pub fn probit_returns<T: Real>(fit: &ProbitFit<T>, data: &Dataset<T>) -> Result<ReturnsDistribution<T>> {
    if !fit.converged {
        return Err(Error::Domain("probit fit did not converge".into()));
    }
    let location = (0..data.n()).map(|i| data.x_dot(i, &fit.theta) - data.price()[i]).collect();
    ReturnsDistribution::new(location, fit.sigma, ReturnsKind::Probit)
}
