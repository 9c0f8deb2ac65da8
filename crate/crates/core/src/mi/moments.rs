//! Revealed-preference and odds-based moment inequalities.
//!
//! With `a = (Xθ − Price)/σ_ε`, each row contributes four functions whose
//! conditional means are nonnegative at the true parameter. Interacting them
//! with nonnegative instrument functions gives unconditional inequalities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::scalar::Real;
use crate::stats::{cdf, ln_cdf, lower_mills, upper_mills};

/// Odds ratios are capped here; capped rows are reported as saturated.
pub const ODDS_CAP: f64 = 1e300;

/// Candidate parameter `ψ = (θ, σ_ε)` in monetary units.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiPoint<T: Real> {
    pub theta: DVector<T>,
    pub sigma_eps: T,
}

impl<T: Real> PsiPoint<T> {
    pub fn new(theta: DVector<T>, sigma_eps: T) -> Result<Self> {
        if !(sigma_eps > T::zero()) {
            return Err(Error::Domain(format!("sigma_eps must be positive, got {sigma_eps}")));
        }
        Ok(PsiPoint { theta, sigma_eps })
    }

    /// Flat coordinates `(θ…, σ_ε)`.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v: Vec<T> = self.theta.iter().copied().collect();
        v.push(self.sigma_eps);
        v
    }

    pub fn from_slice(v: &[T]) -> Result<Self> {
        let k = v.len() - 1;
        PsiPoint::new(DVector::from_column_slice(&v[..k]), v[k])
    }

    fn index(&self, data: &Dataset<T>, row: usize) -> T {
        (data.x_dot(row, &self.theta) - data.price()[row]) / self.sigma_eps
    }
}

/// `(rp1, rp2)` for one row.
pub fn rp_moments<T: Real>(psi: &PsiPoint<T>, data: &Dataset<T>, row: usize) -> (T, T) {
    rp_at(psi.index(data, row), data.s()[row])
}

fn rp_at<T: Real>(a: T, s: bool) -> (T, T) {
    if s {
        (a, lower_mills(a))
    } else {
        (upper_mills(a), -a)
    }
}

/// `(ob1, ob2, saturated)` for one row.
pub fn ob_moments<T: Real>(psi: &PsiPoint<T>, data: &Dataset<T>, row: usize) -> (T, T, bool) {
    ob_at(psi.index(data, row), data.s()[row])
}

fn odds_cap<T: Real>() -> T {
    T::of(ODDS_CAP).min(T::max_value())
}

/// `(1 − Φ(a))/Φ(a)` evaluated on the log scale, capped.
fn odds_against<T: Real>(a: T) -> (T, bool) {
    let cap = odds_cap::<T>();
    let log_odds = ln_cdf(-a) - ln_cdf(a);
    if log_odds >= cap.ln() {
        (cap, true)
    } else if a.abs() < T::of(5.0) {
        (cdf(-a) / cdf(a), false)
    } else {
        (log_odds.exp(), false)
    }
}

fn ob_at<T: Real>(a: T, s: bool) -> (T, T, bool) {
    if s {
        let (odds, sat) = odds_against(a);
        (odds, -T::one(), sat)
    } else {
        let (odds, sat) = odds_against(-a);
        (-T::one(), odds, sat)
    }
}

/// Which columns of `z` get median-split instrument functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstrumentScheme {
    /// Only the excluded instruments.
    ExcludedOnly,
    /// Excluded instruments followed by the non-constant covariates.
    #[default]
    WithCovariates,
}

/// Nonnegative instrument functions: the constant plus, for each selected
/// column, the indicators of being above and at-or-below its median.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentFunctions<T: Real> {
    pub columns: Vec<usize>,
    pub medians: Vec<T>,
}

fn median<T: Real>(v: impl Iterator<Item = T>) -> T {
    let mut xs: Vec<T> = v.collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) * T::of(0.5)
    }
}

impl<T: Real> InstrumentFunctions<T> {
    /// Medians are computed once here from the data.
    pub fn new(data: &Dataset<T>, instruments: &[usize], scheme: InstrumentScheme) -> Result<Self> {
        let mut columns = Vec::new();
        for &c in instruments {
            if c >= data.m() {
                return Err(Error::InvalidSpec(format!("instrument column {} out of range", c + 1)));
            }
            if !data.x_columns_in_z().contains(&c) && !columns.contains(&c) {
                columns.push(c);
            }
        }
        if scheme == InstrumentScheme::WithCovariates {
            // x column 0 is the constant
            columns.extend(data.x_columns_in_z().iter().skip(1).copied());
        }
        let medians = columns.iter().map(|&c| median(data.z().column(c).iter().copied())).collect();
        Ok(InstrumentFunctions { columns, medians })
    }

    pub fn count(&self) -> usize {
        1 + 2 * self.columns.len()
    }

    pub fn value(&self, data: &Dataset<T>, k: usize, row: usize) -> bool {
        if k == 0 {
            return true;
        }
        let c = (k - 1) / 2;
        let z = data.z()[(row, self.columns[c])];
        if (k - 1) % 2 == 0 {
            z > self.medians[c]
        } else {
            z <= self.medians[c]
        }
    }

    pub fn label(&self, k: usize) -> String {
        if k == 0 {
            return "1".into();
        }
        let name = Dataset::<T>::z_name(self.columns[(k - 1) / 2]);
        if (k - 1) % 2 == 0 {
            format!("{name}>med")
        } else {
            format!("{name}<=med")
        }
    }
}

pub const MOMENT_NAMES: [&str; 4] = ["rp1", "rp2", "ob1", "ob2"];

/// Per-observation unconditional moments at one `ψ`; moment `ℓ = 4k + j`
/// pairs instrument function `k` with base moment `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet<T: Real> {
    pub values: DMatrix<T>,
    pub means: DVector<T>,
    /// Standard deviations with divisor `n`.
    pub sds: DVector<T>,
    pub labels: Vec<String>,
    /// Rows whose odds ratio hit the cap.
    pub saturated_rows: usize,
}

impl<T: Real> MomentSet<T> {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Column-wise max-abs scale, so second moments stay finite even when
    /// odds ratios are near the cap.
    fn column_scales(&self) -> Vec<T> {
        (0..self.len())
            .map(|l| {
                let m = self.values.column(l).iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
                if m > T::zero() {
                    m
                } else {
                    T::one()
                }
            })
            .collect()
    }

    /// Moments with `σ̂ = 0` (relative to their magnitude).
    pub fn degenerate(&self) -> Vec<usize> {
        let scales = self.column_scales();
        (0..self.len()).filter(|&l| !(self.sds[l] > T::of(1e-12) * scales[l])).collect()
    }

    /// Correlation matrix of the moments in `keep`.
    pub fn correlation(&self, keep: &[usize]) -> DMatrix<T> {
        let n = T::of(self.n() as f64);
        let scales = self.column_scales();
        let centred: Vec<Vec<T>> = keep
            .iter()
            .map(|&l| self.values.column(l).iter().map(|&v| (v - self.means[l]) / scales[l]).collect())
            .collect();
        let q = keep.len();
        let mut cov = DMatrix::<T>::zeros(q, q);
        for a in 0..q {
            for b in 0..=a {
                let s: T = centred[a].iter().zip(&centred[b]).map(|(&x, &y)| x * y).sum::<T>() / n;
                cov[(a, b)] = s;
                cov[(b, a)] = s;
            }
        }
        let d: Vec<T> = (0..q).map(|a| cov[(a, a)].sqrt()).collect();
        DMatrix::from_fn(q, q, |a, b| if a == b { T::one() } else { cov[(a, b)] / (d[a] * d[b]) })
    }

    /// `√n·m̄_ℓ/σ̂_ℓ`.
    pub fn t_stat(&self, l: usize) -> T {
        T::of(self.n() as f64).sqrt() * self.means[l] / self.sds[l]
    }
}

pub fn build_unconditional_moments<T: Real>(psi: &PsiPoint<T>, data: &Dataset<T>, ifs: &InstrumentFunctions<T>) -> MomentSet<T> {
    let n = data.n();
    let kk = ifs.count();
    let l = 4 * kk;
    let mut values = DMatrix::<T>::zeros(n, l);
    let mut saturated_rows = 0;
    for i in 0..n {
        let a = psi.index(data, i);
        let s = data.s()[i];
        let (rp1, rp2) = rp_at(a, s);
        let (ob1, ob2, sat) = ob_at(a, s);
        if sat {
            saturated_rows += 1;
        }
        let base = [rp1, rp2, ob1, ob2];
        for k in 0..kk {
            if ifs.value(data, k, i) {
                for (j, &b) in base.iter().enumerate() {
                    values[(i, 4 * k + j)] = b;
                }
            }
        }
    }
    let nn = T::of(n as f64);
    let means = DVector::from_fn(l, |c, _| values.column(c).sum() / nn);
    let sds = DVector::from_fn(l, |c, _| {
        let m = values.column(c).iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        if m == T::zero() {
            return T::zero();
        }
        let var: T = values.column(c).iter().map(|&v| ((v - means[c]) / m).powi(2)).sum::<T>() / nn;
        m * var.sqrt()
    });
    let labels = (0..kk)
        .flat_map(|k| MOMENT_NAMES.iter().map(move |j| (k, *j)))
        .map(|(k, j)| format!("{j}|{}", ifs.label(k)))
        .collect();
    MomentSet { values, means, sds, labels, saturated_rows }
}

/// Criterion value together with the moments it used.
#[derive(Debug, Clone, PartialEq)]
pub struct QStatistic<T: Real> {
    pub q: T,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// `Q = Σ_ℓ min(√n·m̄_ℓ/σ̂_ℓ, 0)²` over moments with positive variance.
pub fn q_statistic<T: Real>(ms: &MomentSet<T>) -> Result<QStatistic<T>> {
    let dropped = ms.degenerate();
    let kept: Vec<usize> = (0..ms.len()).filter(|l| !dropped.contains(l)).collect();
    if kept.is_empty() {
        return Err(Error::AllMomentsDegenerate);
    }
    let q = kept.iter().map(|&l| ms.t_stat(l).min(T::zero()).powi(2)).sum();
    Ok(QStatistic { q, kept, dropped })
}
