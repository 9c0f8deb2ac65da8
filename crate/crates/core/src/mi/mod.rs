//! Moment-inequality confidence sets for `(θ, σ_ε)`.

pub mod bounds;
pub mod critical;
pub mod moments;
pub mod search;

pub use bounds::{mi_returns_bounds, BoundMember, DEFAULT_PHI_GRID};
pub use critical::{as_critical_value, critical_value_with_draws, CriticalDraws, CriticalValue};
pub use moments::{build_unconditional_moments, ob_moments, q_statistic, rp_moments, InstrumentFunctions, InstrumentScheme, MomentSet, PsiPoint, QStatistic};
pub use search::{confidence_set, ConfidenceSet, GridPoint, MiDiagnostics, MiEngine, MiOptions, PointTest};
