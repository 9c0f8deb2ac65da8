//! Tables, density grids and timing summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::control_function::CfFit;
use crate::dgp::ScenarioTargets;
use crate::error::{Error, Result};
use crate::mi::ConfidenceSet;
use crate::model::ReturnsDistribution;
use crate::probit::ProbitFit;
use crate::scalar::Real;
use crate::stats::{cdf, pdf};

/// Default number of support points for density grids.
pub const DEFAULT_SUPPORT_POINTS: usize = 512;
/// Beyond this many scales a normal component counts as fully below or above.
const TAIL_CUTOFF: f64 = 9.0;

fn check_support<T: Real>(support: &[T]) -> Result<()> {
    if support.len() < 50 {
        return Err(Error::Domain(format!("support needs at least 50 points, got {}", support.len())));
    }
    if support.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("support must be strictly ascending".into()));
    }
    Ok(())
}

/// `(1/n) Σᵢ φ((t − locᵢ)/s)/s` at each support point.
pub fn pooled_density<T: Real>(rd: &ReturnsDistribution<T>, support: &[T]) -> Result<Vec<T>> {
    check_support(support)?;
    let n = T::of(rd.location.len() as f64);
    let inv = T::one() / rd.scale;
    Ok(support
        .iter()
        .map(|&t| rd.location.iter().map(|&m| pdf((t - m) * inv)).sum::<T>() * inv / n)
        .collect())
}

/// Bin spacing of [`binned_density`] in units of the scale.
const BIN_FRACTION: f64 = 1.0 / 64.0;

/// Pooled density with locations linearly binned onto a grid of spacing
/// `s/64` and components beyond nine scales skipped.
///
/// Linear binning moves each component by at most half a bin in a way that
/// keeps its mass and mean, so the error at any point is at most
/// `δ²/8 · max|K''| = φ(0)/(8·64²·s) ≈ 1.2e-5/s`. Cost is about
/// `support × min(n, range/δ)` instead of `support × n`.
pub fn binned_density<T: Real>(rd: &ReturnsDistribution<T>, support: &[T]) -> Result<Vec<T>> {
    check_support(support)?;
    let scale = rd.scale.as_f64();
    let delta = scale * BIN_FRACTION;
    let lo = rd.location.iter().map(|m| m.as_f64()).fold(f64::INFINITY, f64::min);
    let hi = rd.location.iter().map(|m| m.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let bins = ((hi - lo) / delta).floor() as usize + 2;
    if bins >= rd.location.len() {
        return pooled_density(rd, support);
    }
    let mut w = vec![0.0; bins];
    for m in &rd.location {
        let u = (m.as_f64() - lo) / delta;
        let b = (u.floor() as usize).min(bins - 2);
        let f = u - b as f64;
        w[b] += 1.0 - f;
        w[b + 1] += f;
    }
    let n = rd.location.len() as f64;
    let reach = (TAIL_CUTOFF / BIN_FRACTION).ceil() as isize;
    Ok(support
        .iter()
        .map(|&t| {
            let c = ((t.as_f64() - lo) / delta).round() as isize;
            let first = (c - reach).max(0);
            let last = (c + reach).min(bins as isize - 1);
            let mut acc = 0.0;
            for b in first..=last {
                let b = b as usize;
                if w[b] != 0.0 {
                    acc += w[b] * pdf((t.as_f64() - (lo + b as f64 * delta)) / scale);
                }
            }
            T::of(acc / (n * scale))
        })
        .collect())
}

/// Mixture CDF evaluator with sorted locations, so components far from the
/// evaluation point are counted rather than computed.
pub struct PooledCdf<T: Real> {
    sorted: Vec<T>,
    scale: T,
}

impl<T: Real> PooledCdf<T> {
    pub fn new(rd: &ReturnsDistribution<T>) -> Self {
        let mut sorted = rd.location.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        PooledCdf { sorted, scale: rd.scale }
    }

    pub fn eval(&self, t: T) -> T {
        let cut = T::of(TAIL_CUTOFF) * self.scale;
        // components with loc < t − cut have CDF 1, loc > t + cut have 0
        let lo = self.sorted.partition_point(|&m| m < t - cut);
        let hi = self.sorted.partition_point(|&m| m <= t + cut);
        let inv = T::one() / self.scale;
        let middle: T = self.sorted[lo..hi].iter().map(|&m| cdf((t - m) * inv)).sum();
        (T::of(lo as f64) + middle) / T::of(self.sorted.len() as f64)
    }
}

pub fn pooled_cdf<T: Real>(rd: &ReturnsDistribution<T>, t: T) -> T {
    PooledCdf::new(rd).eval(t)
}

/// Kolmogorov–Smirnov distance between the pooled normal mixture and the
/// empirical distribution of `sample`.
pub fn ks_distance<T: Real>(rd: &ReturnsDistribution<T>, sample: &[T]) -> Result<T> {
    if sample.is_empty() {
        return Err(Error::Domain("empty comparison sample".into()));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let f = PooledCdf::new(rd);
    let n = T::of(xs.len() as f64);
    let mut d = T::zero();
    for (i, &x) in xs.iter().enumerate() {
        let fx = f.eval(x);
        let above = T::of((i + 1) as f64) / n - fx;
        let below = fx - T::of(i as f64) / n;
        d = d.max(above).max(below);
    }
    Ok(d)
}

/// `[min loc − 4·scale, max loc + 4·scale]` over all distributions, evenly
/// spaced.
pub fn default_support<T: Real>(rds: &[&ReturnsDistribution<T>], points: usize) -> Vec<T> {
    let four = T::of(4.0);
    let lo = rds
        .iter()
        .flat_map(|r| r.location.iter().map(move |&m| m - four * r.scale))
        .fold(T::infinity(), T::min);
    let hi = rds
        .iter()
        .flat_map(|r| r.location.iter().map(move |&m| m + four * r.scale))
        .fold(T::neg_infinity(), T::max);
    linspace(lo, hi, points)
}

pub fn linspace<T: Real>(lo: T, hi: T, points: usize) -> Vec<T> {
    let denom = T::of((points.max(2) - 1) as f64);
    (0..points).map(|i| lo + (hi - lo) * T::of(i as f64) / denom).collect()
}

pub fn trapezoid<T: Real>(x: &[T], y: &[T]) -> T {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) * T::of(0.5)).sum()
}

/// Densities of several methods on a common support.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid<T: Real> {
    pub support: Vec<T>,
    pub methods: Vec<String>,
    pub densities: Vec<Vec<T>>,
}

impl<T: Real> DensityGrid<T> {
    pub fn new(support: Vec<T>) -> Result<Self> {
        check_support(&support)?;
        Ok(DensityGrid { support, methods: Vec::new(), densities: Vec::new() })
    }

    pub fn add(&mut self, method: &str, rd: &ReturnsDistribution<T>) -> Result<()> {
        let d = pooled_density(rd, &self.support)?;
        self.push(method, d)
    }

    pub fn push(&mut self, method: &str, density: Vec<T>) -> Result<()> {
        if density.len() != self.support.len() {
            return Err(Error::Domain("density length differs from support".into()));
        }
        self.methods.push(method.to_string());
        self.densities.push(density);
        Ok(())
    }

    pub fn integral(&self, method: usize) -> T {
        trapezoid(&self.support, &self.densities[method])
    }
}

/// Pointwise minimum and maximum over a family of pooled densities, each
/// evaluated with [`binned_density`].
pub fn envelope<T: Real>(family: &[&ReturnsDistribution<T>], support: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if family.is_empty() {
        return Err(Error::EmptyConfidenceSet);
    }
    let mut lo = vec![T::infinity(); support.len()];
    let mut hi = vec![T::neg_infinity(); support.len()];
    for rd in family {
        let d = binned_density(rd, support)?;
        for (j, v) in d.into_iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    Ok((lo, hi))
}

/// Two whitespace-separated columns, readable by gnuplot.
pub fn write_dat<T: Real>(path: &Path, support: &[T], density: &[T]) -> Result<()> {
    let mut out = String::with_capacity(support.len() * 40);
    out.push_str("# support density\n");
    for (x, y) in support.iter().zip(density) {
        let _ = writeln!(out, "{:.10e} {:.10e}", x.as_f64(), y.as_f64());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A fitted estimator to show as a column.
#[derive(Debug, Clone, Copy)]
pub enum MethodFit<'a, T: Real> {
    Probit(&'a ProbitFit<T>),
    ControlFunction(&'a CfFit<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub param: String,
    pub target: Option<f64>,
    /// `(estimate, standard error)` per method column.
    pub cells: Vec<Option<(f64, f64)>>,
    pub mi: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub scenario: String,
    pub n: usize,
    pub methods: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn param_label(j: usize) -> String {
    if j == 0 {
        "Constant".into()
    } else {
        format!("x_{j}")
    }
}

/// Lays out estimates as rows `Constant, x_j…, sigma, sigma_zeta, rho` and,
/// when a confidence set is given, `sigma_eps, sigma_xi`.
pub fn render_table<T: Real>(
    scenario: &str,
    n: usize,
    targets: &ScenarioTargets,
    fits: &[(&str, MethodFit<'_, T>)],
    cs: Option<&ConfidenceSet<T>>,
) -> EstimateTable {
    let k = targets.theta_true.len();
    let bounds = cs.and_then(|c| c.bounds());
    let mi = |j: usize| bounds.as_ref().map(|b| (b[j].0.as_f64(), b[j].1.as_f64()));
    let mut rows = Vec::new();
    let cell_theta = |j: usize| -> Vec<Option<(f64, f64)>> {
        fits.iter()
            .map(|(_, f)| match f {
                MethodFit::Probit(p) => Some((p.theta[j].as_f64(), p.std_errors()[j].as_f64())),
                MethodFit::ControlFunction(c) => Some((c.theta[j].as_f64(), c.std_errors()[j].as_f64())),
            })
            .collect()
    };
    for j in 0..k {
        rows.push(TableRow { param: param_label(j), target: Some(targets.theta_true[j]), cells: cell_theta(j), mi: mi(j) });
    }
    let pick = |sel: &dyn Fn(&MethodFit<'_, T>) -> Option<(f64, f64)>| fits.iter().map(|(_, f)| sel(f)).collect::<Vec<_>>();
    rows.push(TableRow {
        param: "sigma".into(),
        target: Some(targets.sigma_true),
        cells: pick(&|f| match f {
            MethodFit::Probit(p) => Some((p.sigma.as_f64(), p.se_sigma().as_f64())),
            _ => None,
        }),
        mi: None,
    });
    rows.push(TableRow {
        param: "sigma_zeta".into(),
        target: Some(targets.sigma_zeta_true),
        cells: pick(&|f| match f {
            MethodFit::ControlFunction(c) => Some((c.sigma_zeta.as_f64(), c.std_errors()[k].as_f64())),
            _ => None,
        }),
        mi: None,
    });
    rows.push(TableRow {
        param: "rho".into(),
        target: Some(targets.rho_true),
        cells: pick(&|f| match f {
            MethodFit::ControlFunction(c) => Some((c.rho.as_f64(), c.std_errors()[k + 1].as_f64())),
            _ => None,
        }),
        mi: None,
    });
    if cs.is_some() {
        for (label, target) in [("sigma_eps", targets.sigma_eps_true), ("sigma_xi", targets.sigma_xi_true)] {
            rows.push(TableRow { param: label.into(), target: Some(target), cells: vec![None; fits.len()], mi: mi(k) });
        }
    }
    EstimateTable { scenario: scenario.to_string(), n, methods: fits.iter().map(|(m, _)| m.to_string()).collect(), rows }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EstimateTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,target");
        for m in &self.methods {
            let _ = write!(out, ",{m},{m}_se");
        }
        out.push_str(",mi_lo,mi_hi\n");
        for r in &self.rows {
            out.push_str(&r.param);
            out.push(',');
            out.push_str(&fmt_opt(r.target));
            for c in &r.cells {
                let _ = write!(out, ",{},{}", fmt_opt(c.map(|v| v.0)), fmt_opt(c.map(|v| v.1)));
            }
            let _ = writeln!(out, ",{},{}", fmt_opt(r.mi.map(|v| v.0)), fmt_opt(r.mi.map(|v| v.1)));
        }
        out
    }

    pub fn row(&self, param: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.param == param)
    }

    pub fn estimate(&self, param: &str, method: &str) -> Option<f64> {
        let col = self.methods.iter().position(|m| m == method)?;
        self.row(param)?.cells[col].map(|c| c.0)
    }
}

/// Wall-clock seconds of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRun {
    pub scenario: String,
    pub method: String,
    pub seconds: f64,
}

pub fn timing_report(runs: &[TimingRun]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Domain("no timing runs".into()));
    }
    let mut out = String::from("scenario,method,seconds\n");
    for r in runs {
        let _ = writeln!(out, "{},{},{:.3}", r.scenario, r.method, r.seconds);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReturnsKind;
    use approx::assert_relative_eq;

    fn rd(loc: Vec<f64>, scale: f64) -> ReturnsDistribution<f64> {
        ReturnsDistribution::new(loc, scale, ReturnsKind::Probit).unwrap()
    }

    #[test]
    fn binned_density_is_within_its_bound() {
        let mut rng = crate::stats::RngStream::new(9, 0);
        for scale in [0.1, 0.7, 3.0] {
            let loc: Vec<f64> = (0..20_000).map(|_| 2.0 * rng.standard_normal::<f64>()).collect();
            let r = rd(loc, scale);
            let support = linspace(-12.0, 12.0, 301);
            let exact = pooled_density(&r, &support).unwrap();
            let fast = binned_density(&r, &support).unwrap();
            let bound = 1.3e-5 / scale;
            for (a, b) in exact.iter().zip(&fast) {
                assert!((a - b).abs() <= bound, "scale {scale}: {a} vs {b}");
            }
        }
        // few locations: falls back to the exact sum
        let small = rd(vec![0.0, 1.0], 0.5);
        let support = linspace(-3.0, 4.0, 60);
        assert_eq!(binned_density(&small, &support).unwrap(), pooled_density(&small, &support).unwrap());
    }

    #[test]
    fn single_component_is_the_normal_curve() {
        let s = linspace(-5.0, 5.0, 101);
        let d = pooled_density(&rd(vec![0.0], 1.0), &s).unwrap();
        for (x, y) in s.iter().zip(&d) {
            assert_relative_eq!(*y, (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_mixture() {
        let s = linspace(-6.0, 6.0, 121);
        let d = pooled_density(&rd(vec![-2.0, 2.0], 1.0), &s).unwrap();
        for j in 0..s.len() {
            assert!((d[j] - d[s.len() - 1 - j]).abs() <= 1e-12);
        }
        assert!(pooled_density(&rd(vec![0.0], 1.0), &linspace(0.0, 1.0, 10)).is_err());
    }

    #[test]
    fn integrates_to_one() {
        let r = rd(vec![-3.0, 0.5, 4.0], 1.5);
        let s = linspace(-3.0 - 9.0, 4.0 + 9.0, 800);
        let d = pooled_density(&r, &s).unwrap();
        let i = trapezoid(&s, &d);
        assert!(i > 0.9999 && i < 1.0001, "{i}");
        let s4 = default_support(&[&r], DEFAULT_SUPPORT_POINTS);
        let i4 = trapezoid(&s4, &pooled_density(&r, &s4).unwrap());
        assert!(i4 > 0.95 && i4 <= 1.0001);
    }

    #[test]
    fn cdf_and_ks() {
        let r = rd(vec![0.0], 1.0);
        assert_relative_eq!(pooled_cdf(&r, 1.0), 0.8413447460685429, epsilon = 1e-15);
        assert_eq!(pooled_cdf(&r, 50.0), 1.0);
        // one point at the median: the empirical CDF jumps from 0 to 1 there
        assert_relative_eq!(ks_distance(&r, &[0.0]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn envelope_brackets_members() {
        let a = rd(vec![0.0], 1.0);
        let b = rd(vec![1.0], 2.0);
        let s = linspace(-5.0, 5.0, 60);
        let (lo, hi) = envelope(&[&a, &b], &s).unwrap();
        let da = pooled_density(&a, &s).unwrap();
        for j in 0..s.len() {
            assert!(lo[j] <= da[j] && da[j] <= hi[j]);
        }
    }

    #[test]
    fn timing_csv() {
        let csv = timing_report(&[TimingRun { scenario: "A6".into(), method: "cf".into(), seconds: 0.01234 }]).unwrap();
        assert_eq!(csv, "scenario,method,seconds\nA6,cf,0.012\n");
        assert!(timing_report(&[]).is_err());
    }
}
