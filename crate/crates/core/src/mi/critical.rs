//! Simulated critical values for the moment-selection criterion.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetric_sqrt;
use crate::mi::moments::{q_statistic, MomentSet};
use crate::scalar::Real;
use crate::stats::RngStream;

/// Eigenvalues of the moment correlation matrix are floored here before the
/// square root.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Eigenvalues below `-NEGATIVE_EIGEN_TOL` flag the matrix as indefinite.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// `R × L` standard-normal draws shared by every point of a search.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalDraws<T: Real> {
    pub chi: DMatrix<T>,
}

impl<T: Real> CriticalDraws<T> {
    pub fn new(draws: usize, moments: usize, rng: &mut RngStream) -> Result<Self> {
        if draws < 100 {
            return Err(Error::InvalidSpec(format!("need at least 100 simulation draws, got {draws}")));
        }
        let mut chi = DMatrix::<T>::zeros(draws, moments);
        for r in 0..draws {
            for l in 0..moments {
                chi[(r, l)] = rng.standard_normal();
            }
        }
        Ok(CriticalDraws { chi })
    }

    pub fn draws(&self) -> usize {
        self.chi.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalValue<T: Real> {
    pub value: T,
    /// The correlation matrix had a materially negative eigenvalue.
    pub clipped: bool,
    pub binding: usize,
}

/// Index of the `(1 − α)` empirical quantile among `r` sorted values.
pub(crate) fn quantile_index(r: usize, alpha: f64) -> usize {
    let pos = ((1.0 - alpha) * r as f64 - 1e-9).ceil() as usize;
    pos.clamp(1, r) - 1
}

/// `(1 − α)` quantile of `Σ_ℓ min((Ω̂^{1/2}χ_r)_ℓ, 0)²` over moments that are
/// close to binding (`√n·m̄_ℓ/σ̂_ℓ ≤ √ln n`), using the supplied draws.
pub fn critical_value_with_draws<T: Real>(ms: &MomentSet<T>, alpha: f64, draws: &CriticalDraws<T>) -> Result<CriticalValue<T>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if draws.chi.ncols() < ms.len() {
        return Err(Error::InvalidSpec("fewer draw columns than moments".into()));
    }
    let qs = q_statistic(ms)?;
    let threshold = T::of((ms.n() as f64).ln().max(0.0).sqrt());
    let binding: Vec<usize> = (0..qs.kept.len()).filter(|&a| ms.t_stat(qs.kept[a]) <= threshold).collect();
    if binding.is_empty() {
        return Ok(CriticalValue { value: T::zero(), clipped: false, binding: 0 });
    }
    let omega = ms.correlation(&qs.kept);
    let (root, clipped) = symmetric_sqrt(&omega, T::of(EIGEN_FLOOR), T::of(NEGATIVE_EIGEN_TOL));
    let r = draws.draws();
    let mut sims: Vec<T> = (0..r)
        .map(|row| {
            let mut total = T::zero();
            for &a in &binding {
                let mut v = T::zero();
                for (b, &l) in qs.kept.iter().enumerate() {
                    v += root[(a, b)] * draws.chi[(row, l)];
                }
                if v < T::zero() {
                    total += v * v;
                }
            }
            total
        })
        .collect();
    sims.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(CriticalValue { value: sims[quantile_index(r, alpha)], clipped, binding: binding.len() })
}

/// Critical value with `draws` fresh draws from `rng`.
pub fn as_critical_value<T: Real>(ms: &MomentSet<T>, alpha: f64, draws: usize, rng: &mut RngStream) -> Result<CriticalValue<T>> {
    let d = CriticalDraws::new(draws, ms.len(), rng)?;
    critical_value_with_draws(ms, alpha, &d)
}
