//! Maximum likelihood for binary choice with a normal index `Vᵢ·b`, where one
//! coefficient (the one on −Price) is restricted to be positive.
//!
//! Both the constrained probit and the control-function second stage are
//! instances: they differ only in the columns of `V`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, cholesky_spd, least_squares};
use crate::scalar::Real;
use crate::stats::{ln_cdf, lower_mills};

/// Log-likelihood with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLik<T: Real> {
    pub value: T,
    pub gradient: DVector<T>,
    pub hessian: DMatrix<T>,
}

/// Per-observation `(ℓ, dℓ/da, d²ℓ/da²)` at index `a`.
#[inline]
pub(crate) fn obs_terms<T: Real>(a: T, s: bool) -> (T, T, T) {
    if s {
        let lam = lower_mills(a);
        (ln_cdf(a), lam, -lam * (a + lam))
    } else {
        let lam = lower_mills(-a);
        (ln_cdf(-a), -lam, -lam * (lam - a))
    }
}

pub(crate) struct IndexDesign<T: Real> {
    pub v: DMatrix<T>,
    pub s: Vec<bool>,
    /// Column whose coefficient is estimated on the log scale.
    pub positive_col: usize,
}

impl<T: Real> IndexDesign<T> {
    fn index(&self, row: usize, b: &DVector<T>) -> T {
        let mut a = T::zero();
        for j in 0..self.v.ncols() {
            a += self.v[(row, j)] * b[j];
        }
        a
    }

    pub fn value(&self, b: &DVector<T>) -> T {
        (0..self.v.nrows()).map(|i| obs_terms(self.index(i, b), self.s[i]).0).sum()
    }

    pub fn loglik(&self, b: &DVector<T>) -> LogLik<T> {
        let p = self.v.ncols();
        let mut value = T::zero();
        let mut gradient = DVector::<T>::zeros(p);
        let mut hessian = DMatrix::<T>::zeros(p, p);
        for i in 0..self.v.nrows() {
            let (l, g, h) = obs_terms(self.index(i, b), self.s[i]);
            value += l;
            for a in 0..p {
                let va = self.v[(i, a)];
                gradient[a] += g * va;
                for c in 0..=a {
                    hessian[(a, c)] += h * va * self.v[(i, c)];
                }
            }
        }
        for a in 0..p {
            for c in 0..a {
                hessian[(c, a)] = hessian[(a, c)];
            }
        }
        LogLik { value, gradient, hessian }
    }

    /// Per-observation `dℓ/da` and `d²ℓ/da²`.
    pub fn obs_derivatives(&self, b: &DVector<T>) -> (Vec<T>, Vec<T>) {
        (0..self.v.nrows())
            .map(|i| {
                let (_, g, h) = obs_terms(self.index(i, b), self.s[i]);
                (g, h)
            })
            .unzip()
    }

    /// Linear-probability starting values on the first `lpm_cols` columns,
    /// scaled by 2.5 (intercept recentred at 0.5); remaining columns start
    /// at zero.
    pub fn start(&self, lpm_cols: usize) -> Result<DVector<T>> {
        let n = self.v.nrows();
        let w = self.v.columns(0, lpm_cols).into_owned();
        let y = DVector::from_fn(n, |i, _| if self.s[i] { T::one() } else { T::zero() });
        let (b, _) = least_squares(&w, &y).map_err(|c| Error::RankDeficient { column: format!("design column {}", c + 1) })?;
        let scale = T::of(2.5);
        let mut start = DVector::<T>::zeros(self.v.ncols());
        for j in 0..lpm_cols {
            start[j] = scale * b[j];
        }
        start[0] = scale * (b[0] - T::of(0.5));
        let pc = self.positive_col;
        start[pc] = (scale * b[pc].abs()).max(T::of(1e-3)).min(T::of(1e3));
        Ok(start)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MleResult<T: Real> {
    pub b: DVector<T>,
    pub loglik: LogLik<T>,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
}

fn max_abs<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Damped Newton ascent in `ω` (the positive coefficient replaced by its log),
/// falling back to a BFGS direction when the Hessian in `ω` is not negative
/// definite. Convergence is judged on the gradient in the original
/// coefficients.
pub(crate) fn maximize<T: Real>(design: &IndexDesign<T>, start: DVector<T>, max_iter: usize, grad_tol: T) -> MleResult<T> {
    let pc = design.positive_col;
    let p = start.len();
    let to_b = |w: &DVector<T>| {
        let mut b = w.clone();
        b[pc] = w[pc].exp();
        b
    };
    let mut omega = start.clone();
    omega[pc] = start[pc].ln();
    let mut b = to_b(&omega);
    let mut ll = design.loglik(&b);
    let mut binv: Option<DMatrix<T>> = None;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        if max_abs(&ll.gradient) <= grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let gamma = b[pc];
        let mut g_w = ll.gradient.clone();
        g_w[pc] *= gamma;
        let mut h_w = ll.hessian.clone();
        for j in 0..p {
            h_w[(pc, j)] *= gamma;
            h_w[(j, pc)] *= gamma;
        }
        h_w[(pc, pc)] += gamma * ll.gradient[pc];

        let neg_h = -h_w;
        let ridge = T::of(1e-10) * (T::one() + (0..p).fold(T::zero(), |m, j| m.max(neg_h[(j, j)].abs())));
        let factor = cholesky_spd(&neg_h).or_else(|| {
            // a flat direction (e.g. an all-zero regressor) leaves −H only semidefinite
            let mut shifted = neg_h.clone();
            for j in 0..p {
                shifted[(j, j)] += ridge;
            }
            cholesky_spd(&shifted)
        });
        let mut dir = match factor {
            Some(l) => cholesky_solve(&l, &g_w),
            None => {
                let approx = binv.clone().unwrap_or_else(|| {
                    DMatrix::identity(p, p) * (T::one() / (T::one() + max_abs(&g_w)))
                });
                &approx * &g_w
            }
        };
        let mut slope = g_w.dot(&dir);
        if !(slope > T::zero()) {
            dir = g_w.clone();
            slope = g_w.dot(&g_w);
        }

        let biggest = max_abs(&dir);
        let mut t = if biggest > T::of(10.0) { T::of(10.0) / biggest } else { T::one() };
        let slack = T::of(16.0) * T::epsilon() * (T::one() + ll.value.abs());
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &omega + &dir * t;
            let cb = to_b(&cand);
            let val = design.value(&cb);
            if val.is_finite() && val - ll.value >= T::of(1e-4) * t * slope - slack {
                accepted = Some((cand, cb));
                break;
            }
            t *= T::of(0.5);
        }
        let Some((new_omega, new_b)) = accepted else {
            break;
        };

        let new_ll = design.loglik(&new_b);
        let mut new_gw = new_ll.gradient.clone();
        new_gw[pc] *= new_b[pc];
        let step = &new_omega - &omega;
        let y = &g_w - &new_gw;
        let sy = step.dot(&y);
        if sy > T::zero() {
            let h0 = binv.take().unwrap_or_else(|| DMatrix::identity(p, p) * (sy / y.dot(&y)));
            let rho = T::one() / sy;
            let id = DMatrix::<T>::identity(p, p);
            let left = &id - (&step * y.transpose()) * rho;
            let right = &id - (&y * step.transpose()) * rho;
            binv = Some(left * h0 * right + (&step * step.transpose()) * rho);
        }
        omega = new_omega;
        b = new_b;
        ll = new_ll;
    }
    if !converged && max_abs(&ll.gradient) <= grad_tol {
        converged = true;
    }
    MleResult { b, loglik: ll, iterations, converged, n: design.v.nrows() }
}

/// Heuristic separation flag: the price coefficient grew by more than 1e4
/// over its start, or the average log-likelihood is within 1e-6 of zero.
pub(crate) fn looks_separated<T: Real>(res: &MleResult<T>, gamma0: T, pc: usize) -> bool {
    res.b[pc] > T::of(1e4) * gamma0 || res.loglik.value > -T::of(1e-6) * T::of(res.n as f64)
}

pub(crate) fn check_price_variation<T: Real>(price: &DVector<T>) -> Result<()> {
    let n = T::of(price.len() as f64);
    let mean = price.sum() / n;
    let var = price.iter().map(|&p| (p - mean) * (p - mean)).sum::<T>() / n;
    if !(var > T::of(1e-14) * (T::one() + mean * mean)) {
        return Err(Error::Identification("price has no sample variation; its coefficient fixes the scale".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obs_terms_match_finite_differences() {
        let h = 1e-5;
        for &a in &[-39.0f64, -12.0, -3.0, -0.2, 0.0, 0.7, 4.0, 15.0, 38.0] {
            for &s in &[true, false] {
                let (l, g, hh) = obs_terms(a, s);
                assert!(l.is_finite() && l <= 0.0);
                let (lp, gp, _) = obs_terms(a + h, s);
                let (lm, gm, _) = obs_terms(a - h, s);
                let fd_g = (lp - lm) / (2.0 * h);
                let fd_h = (gp - gm) / (2.0 * h);
                assert!((fd_g - g).abs() <= 1e-5 * (1.0 + g.abs()), "a={a} s={s}: {g} vs {fd_g}");
                assert!((fd_h - hh).abs() <= 1e-5 * (1.0 + hh.abs()), "a={a} s={s}: {hh} vs {fd_h}");
            }
        }
    }
}
