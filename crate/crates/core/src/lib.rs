//! Estimators of perceived returns to a binary investment.
//!
//! The latent perceived return is `π̃ = Xθ − Price + error` with the price
//! coefficient fixed at −1, so estimates come out in monetary units. Three
//! estimators are provided: a constrained probit, a two-step control
//! function and a moment-inequality confidence set. A simulator, reporting
//! helpers and the shared numerical kernels complete the crate.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the double-precision instantiations.

// `!(x > 0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control_function;
pub mod dgp;
pub mod error;
mod index_mle;
pub mod linalg;
pub mod mi;
pub mod model;
pub mod optim;
pub mod probit;
pub mod report;
pub mod scalar;
pub mod stats;

pub use control_function::{cf_loglik, cf_returns, fit_cf, fit_first_stage, mt_correct, CfFit, FirstStageFit};
pub use dgp::{analytic_targets, builtin_scenario, generate, resolve_scenario, DgpSpec, ScenarioTargets};
pub use error::{Error, Result};
pub use index_mle::LogLik;
pub use mi::{confidence_set, mi_returns_bounds, ConfidenceSet, MiEngine, MiOptions, PsiPoint};
pub use model::{Dataset, LatentModelParams, ReturnsDistribution, ReturnsKind, Sample};
pub use probit::{fit_probit, probit_loglik, probit_returns, FitOptions, ProbitFit};
pub use scalar::Real;
pub use stats::{CovarianceMatrix, RngStream};

pub type Dataset64 = Dataset<f64>;
pub type Sample64 = Sample<f64>;
pub type ProbitFit64 = ProbitFit<f64>;
pub type CfFit64 = CfFit<f64>;
pub type FirstStageFit64 = FirstStageFit<f64>;
pub type ReturnsDistribution64 = ReturnsDistribution<f64>;
pub type LatentModelParams64 = LatentModelParams<f64>;
pub type ConfidenceSet64 = ConfidenceSet<f64>;
pub type PsiPoint64 = PsiPoint<f64>;
