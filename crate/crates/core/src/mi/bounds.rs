//! Perceived-returns distributions implied by the confidence set.
//!
//! The perceived price is unobserved; it is approximated by
//! `φ·Price + (1−φ)·E[Price|Z]` for `φ ∈ [0, 1]`, which cannot be estimated.
//! Each accepted `ψ` and each `φ` gives one normal family.

use crate::control_function::fit_first_stage;
use crate::error::{Error, Result};
use crate::mi::search::ConfidenceSet;
use crate::model::{Dataset, ReturnsDistribution, ReturnsKind};
use crate::scalar::Real;

pub const DEFAULT_PHI_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// One member of the family: accepted point `point`, weight `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMember<T: Real> {
    pub point: usize,
    pub phi: f64,
    pub returns: ReturnsDistribution<T>,
}

pub fn mi_returns_bounds<T: Real>(
    cs: &ConfidenceSet<T>,
    data: &Dataset<T>,
    instruments: &[usize],
    phi_grid: &[f64],
) -> Result<Vec<BoundMember<T>>> {
    if cs.is_empty() {
        return Err(Error::EmptyConfidenceSet);
    }
    if let Some(bad) = phi_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("phi must lie in [0, 1], got {bad}")));
    }
    let fitted = fit_first_stage(data, instruments)?.fitted(data);
    let mut out = Vec::with_capacity(cs.accepted.len() * phi_grid.len());
    for (idx, gp) in cs.accepted.iter().enumerate() {
        let xb: Vec<T> = (0..data.n()).map(|i| data.x_dot(i, &gp.psi.theta)).collect();
        for &phi in phi_grid {
            let w = T::of(phi);
            let location = (0..data.n())
                .map(|i| xb[i] - w * data.price()[i] - (T::one() - w) * fitted[i])
                .collect();
            out.push(BoundMember {
                point: idx,
                phi,
                returns: ReturnsDistribution::new(location, gp.psi.sigma_eps, ReturnsKind::MiBound { phi })?,
            });
        }
    }
    Ok(out)
}
