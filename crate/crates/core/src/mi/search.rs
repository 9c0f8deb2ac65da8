//! Confidence set for `ψ = (θ, σ_ε)` by test inversion on an adaptive grid.
//!
//! Grid points live on an integer lattice: coordinate `k` of key `κ` is
//! `ψ_min,k + κ_k·h_k/2^D` where `h_k` is the initial spacing. Halving the
//! spacing keeps every earlier point on the lattice, so "already tested" is
//! an exact set lookup. The search never leaves the initial box of
//! `±se_multiplier` standard errors around `ψ_min`; sets reaching its edge
//! are flagged.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::control_function::fit_cf;
use crate::error::{Error, Result};
use crate::mi::critical::{critical_value_with_draws, CriticalDraws};
use crate::mi::moments::{build_unconditional_moments, q_statistic, InstrumentFunctions, InstrumentScheme, PsiPoint};
use crate::model::Dataset;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::probit::FitOptions;
use crate::scalar::Real;
use crate::stats::RngStream;

const LATTICE_BITS: u32 = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct MiOptions {
    pub alpha: f64,
    /// Keep halving the spacing until at least this many points are accepted.
    pub min_points: usize,
    /// Simulation draws for the critical values.
    pub draws: usize,
    pub seed: u64,
    pub stream: u64,
    /// Half-width of the initial box in standard errors.
    pub se_multiplier: f64,
    pub points_per_dim: usize,
    pub nelder_mead_iter: usize,
    /// Worker threads for grid waves; `None` uses the global pool.
    pub threads: Option<usize>,
    pub max_evaluations: usize,
    pub max_refinements: usize,
    pub scheme: InstrumentScheme,
}

impl Default for MiOptions {
    fn default() -> Self {
        MiOptions {
            alpha: 0.05,
            min_points: 50,
            draws: 1000,
            seed: 1234,
            stream: 0,
            se_multiplier: 20.0,
            points_per_dim: 10,
            nelder_mead_iter: 500,
            threads: None,
            max_evaluations: 250_000,
            max_refinements: 12,
            scheme: InstrumentScheme::default(),
        }
    }
}

/// Outcome of testing one `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTest<T: Real> {
    pub psi: PsiPoint<T>,
    pub q: T,
    pub critical: T,
    pub accepted: bool,
    pub clipped: bool,
    pub saturated_rows: usize,
    pub dropped: Vec<usize>,
}

/// Everything needed to test individual points: data, instrument functions
/// and the common simulation draws.
pub struct MiEngine<'a, T: Real> {
    data: &'a Dataset<T>,
    ifs: InstrumentFunctions<T>,
    draws: CriticalDraws<T>,
    alpha: f64,
}

impl<'a, T: Real> MiEngine<'a, T> {
    /// Engine with the default instrument functions.
    pub fn new(data: &'a Dataset<T>, instruments: &[usize], alpha: f64, draws: usize, rng: &mut RngStream) -> Result<Self> {
        let ifs = InstrumentFunctions::new(data, instruments, InstrumentScheme::default())?;
        Self::with_functions(data, ifs, alpha, draws, rng)
    }

    pub fn with_functions(data: &'a Dataset<T>, ifs: InstrumentFunctions<T>, alpha: f64, draws: usize, rng: &mut RngStream) -> Result<Self> {
        let draws = CriticalDraws::new(draws, 4 * ifs.count(), rng)?;
        Ok(MiEngine { data, ifs, draws, alpha })
    }

    pub fn instrument_functions(&self) -> &InstrumentFunctions<T> {
        &self.ifs
    }

    pub fn q(&self, psi: &PsiPoint<T>) -> Result<T> {
        let ms = build_unconditional_moments(psi, self.data, &self.ifs);
        Ok(q_statistic(&ms)?.q)
    }

    pub fn evaluate(&self, psi: &PsiPoint<T>) -> Result<PointTest<T>> {
        let ms = build_unconditional_moments(psi, self.data, &self.ifs);
        let qs = q_statistic(&ms)?;
        let cv = critical_value_with_draws(&ms, self.alpha, &self.draws)?;
        Ok(PointTest {
            psi: psi.clone(),
            q: qs.q,
            critical: cv.value,
            accepted: qs.q <= cv.value,
            clipped: cv.clipped,
            saturated_rows: ms.saturated_rows,
            dropped: qs.dropped,
        })
    }
}

/// A tested grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint<T: Real> {
    pub psi: PsiPoint<T>,
    pub q: T,
    pub critical: T,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct MiDiagnostics {
    pub start: Vec<f64>,
    pub start_se: Vec<f64>,
    pub psi_min: Vec<f64>,
    pub q_min: f64,
    pub nelder_mead_iterations: usize,
    pub evaluations: usize,
    pub refinements: usize,
    /// Evaluations whose correlation matrix needed eigenvalue clipping.
    pub clipped_points: usize,
    /// Evaluations with at least one capped odds ratio.
    pub saturated_points: usize,
    /// Moments dropped for zero variance at some point, by label.
    pub dropped_moments: Vec<String>,
    /// The evaluation cap stopped the search early.
    pub truncated: bool,
    /// Some accepted point lies within one grid step of the search box edge.
    pub touches_box: bool,
    pub moment_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet<T: Real> {
    pub accepted: Vec<GridPoint<T>>,
    pub rejected: Vec<GridPoint<T>>,
    /// Final spacing per coordinate of `(θ…, σ_ε)`.
    pub grid_step: Vec<T>,
    pub alpha: f64,
    pub runtime_seconds: f64,
    pub diagnostics: MiDiagnostics,
}

impl<T: Real> ConfidenceSet<T> {
    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    /// Per-coordinate `(min, max)` over accepted points.
    pub fn bounds(&self) -> Option<Vec<(T, T)>> {
        let first = self.accepted.first()?.psi.to_vec();
        let mut b: Vec<(T, T)> = first.iter().map(|&v| (v, v)).collect();
        for p in &self.accepted {
            for (bk, v) in b.iter_mut().zip(p.psi.to_vec()) {
                bk.0 = bk.0.min(v);
                bk.1 = bk.1.max(v);
            }
        }
        Some(b)
    }

    /// Whether the projection of the set on coordinate `k`, widened by half
    /// a grid step on each side, contains `value`.
    pub fn covers(&self, k: usize, value: T) -> bool {
        match self.bounds() {
            Some(b) => {
                let h = self.grid_step[k] * T::of(0.5);
                value >= b[k].0 - h && value <= b[k].1 + h
            }
            None => false,
        }
    }
}

type Key = Vec<i64>;

struct Lattice<T: Real> {
    origin: Vec<T>,
    unit: Vec<T>,
}

impl<T: Real> Lattice<T> {
    fn coords(&self, key: &[i64]) -> Vec<T> {
        key.iter().zip(&self.origin).zip(&self.unit).map(|((&c, &o), &u)| o + T::of(c as f64) * u).collect()
    }
}

fn neighbours(key: &[i64], step: i64) -> Vec<Key> {
    let dim = key.len();
    let total = 3usize.pow(dim as u32);
    let mut out = Vec::with_capacity(total - 1);
    for code in 0..total {
        let mut c = code;
        let mut nb = key.to_vec();
        let mut moved = false;
        for v in nb.iter_mut() {
            let d = (c % 3) as i64 - 1;
            c /= 3;
            *v += d * step;
            moved |= d != 0;
        }
        if moved {
            out.push(nb);
        }
    }
    out
}

struct Search<'e, 'a, T: Real> {
    engine: &'e MiEngine<'a, T>,
    lattice: Lattice<T>,
    tested: BTreeMap<Key, PointTest<T>>,
    /// Largest admissible `|key_k|`.
    limit: i64,
    max_evaluations: usize,
    truncated: bool,
}

impl<T: Real> Search<'_, '_, T> {
    fn psi(&self, key: &[i64]) -> Option<PsiPoint<T>> {
        if key.iter().any(|c| c.abs() > self.limit) {
            return None;
        }
        PsiPoint::from_slice(&self.lattice.coords(key)).ok()
    }

    fn budget(&self) -> usize {
        self.max_evaluations.saturating_sub(self.tested.len())
    }

    /// Tests `keys` (sorted, untested, with σ > 0) in parallel; results are
    /// stored in key order so the outcome does not depend on scheduling.
    fn wave(&mut self, keys: Vec<Key>) -> Result<Vec<Key>> {
        let mut keys = keys;
        if keys.len() > self.budget() {
            keys.truncate(self.budget());
            self.truncated = true;
        }
        let engine = self.engine;
        let jobs: Vec<(Key, PsiPoint<T>)> = keys.into_iter().filter_map(|k| self.psi(&k).map(|p| (k, p))).collect();
        let results: Vec<Result<PointTest<T>>> = jobs.par_iter().map(|(_, p)| engine.evaluate(p)).collect();
        let mut accepted = Vec::new();
        for ((key, _), res) in jobs.into_iter().zip(results) {
            let t = res?;
            if t.accepted {
                accepted.push(key.clone());
            }
            self.tested.insert(key, t);
        }
        Ok(accepted)
    }

    fn test_one(&mut self, key: Key) -> Result<bool> {
        Ok(!self.wave(vec![key])?.is_empty())
    }

    /// Expands every accepted point by its `3^K` neighbourhood at `step`
    /// until no new point is accepted.
    fn close(&mut self, step: i64) -> Result<()> {
        let mut frontier: Vec<Key> = self.tested.iter().filter(|(_, t)| t.accepted).map(|(k, _)| k.clone()).collect();
        while !frontier.is_empty() && !self.truncated {
            let mut next = BTreeSet::new();
            for key in &frontier {
                for nb in neighbours(key, step) {
                    if !self.tested.contains_key(&nb) && self.psi(&nb).is_some() {
                        next.insert(nb);
                    }
                }
            }
            frontier = self.wave(next.into_iter().collect())?;
        }
        Ok(())
    }

    fn accepted_count(&self) -> usize {
        self.tested.values().filter(|t| t.accepted).count()
    }
}

fn fallback_se<T: Real>(se: T, value: T) -> T {
    if se.is_finite() && se > T::zero() {
        se
    } else {
        T::of(0.1) * (T::one() + value.abs())
    }
}

/// Runs the full search: control-function start, simplex minimization of
/// `Q`, ascending-distance scan of the initial grid, closure under
/// neighbourhood expansion and spacing halving.
pub fn confidence_set<T: Real>(data: &Dataset<T>, instruments: &[usize], opts: &MiOptions) -> Result<ConfidenceSet<T>> {
    match opts.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
            pool.install(|| run(data, instruments, opts))
        }
        None => run(data, instruments, opts),
    }
}

fn run<T: Real>(data: &Dataset<T>, instruments: &[usize], opts: &MiOptions) -> Result<ConfidenceSet<T>> {
    let clock = Instant::now();
    if opts.points_per_dim < 2 {
        return Err(Error::InvalidSpec("points_per_dim must be at least 2".into()));
    }
    let cf = fit_cf(data, instruments, &FitOptions::default())?;
    let k = data.k();
    let dim = k + 1;
    let se_all = cf.std_errors();
    let mut start: Vec<T> = cf.theta.iter().copied().collect();
    start.push(cf.sigma_zeta);
    let se: Vec<T> = (0..dim).map(|j| fallback_se(se_all[j], start[j])).collect();

    let mut rng = RngStream::new(opts.seed, opts.stream);
    let ifs = InstrumentFunctions::new(data, instruments, opts.scheme)?;
    let engine = MiEngine::with_functions(data, ifs, opts.alpha, opts.draws, &mut rng)?;

    let objective = |x: &[T]| match PsiPoint::from_slice(x) {
        Ok(p) => engine.q(&p).unwrap_or(T::infinity()),
        Err(_) => T::infinity(),
    };
    let nm = nelder_mead(objective, &start, &se, &NelderMeadOptions { max_iter: opts.nelder_mead_iter, f_tol: 1e-10 });

    let base = 1i64 << LATTICE_BITS;
    let spacing: Vec<T> = se.iter().map(|&s| T::of(2.0 * opts.se_multiplier) * s / T::of((opts.points_per_dim - 1) as f64)).collect();
    let lattice = Lattice { origin: nm.x.clone(), unit: spacing.iter().map(|&h| h / T::of(base as f64)).collect() };
    let limit = (opts.points_per_dim as i64 - 1) * (base / 2);
    let mut search = Search { engine: &engine, lattice, tested: BTreeMap::new(), limit, max_evaluations: opts.max_evaluations, truncated: false };

    // ψ_min first, then the initial grid by distance from it
    let mut found = search.test_one(vec![0; dim])?;
    if !found {
        let p = opts.points_per_dim as i64;
        let offsets: Vec<i64> = (0..p).map(|j| (2 * j - (p - 1)) * (base / 2)).collect();
        let total = (opts.points_per_dim as u128).pow(dim as u32);
        if total > opts.max_evaluations as u128 {
            search.truncated = true;
        }
        let count = total.min(opts.max_evaluations as u128) as usize;
        let mut grid: Vec<(T, Key)> = (0..count)
            .map(|code| {
                let mut c = code;
                let key: Key = (0..dim)
                    .map(|_| {
                        let o = offsets[c % opts.points_per_dim];
                        c /= opts.points_per_dim;
                        o
                    })
                    .collect();
                let d: T = key
                    .iter()
                    .zip(&search.lattice.unit)
                    .map(|(&kk, &u)| (T::of(kk as f64) * u).powi(2))
                    .sum();
                (d, key)
            })
            .collect();
        grid.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.1.cmp(&b.1)));
        for (_, key) in grid {
            if search.budget() == 0 {
                search.truncated = true;
                break;
            }
            if search.tested.contains_key(&key) || search.psi(&key).is_none() {
                continue;
            }
            if search.test_one(key)? {
                found = true;
                break;
            }
        }
    }

    let mut step = base;
    let mut refinements = 0;
    if found {
        search.close(step)?;
        while search.accepted_count() < opts.min_points && refinements < opts.max_refinements && step > 1 && !search.truncated {
            step /= 2;
            refinements += 1;
            search.close(step)?;
        }
    }

    let mut diagnostics = MiDiagnostics {
        start: start.iter().map(|v| v.as_f64()).collect(),
        start_se: se.iter().map(|v| v.as_f64()).collect(),
        psi_min: nm.x.iter().map(|v| v.as_f64()).collect(),
        q_min: nm.fx.as_f64(),
        nelder_mead_iterations: nm.iterations,
        evaluations: search.tested.len(),
        refinements,
        truncated: search.truncated,
        moment_labels: (0..engine.ifs.count())
            .flat_map(|kk| crate::mi::moments::MOMENT_NAMES.iter().map(move |j| (kk, *j)))
            .map(|(kk, j)| format!("{j}|{}", engine.ifs.label(kk)))
            .collect(),
        ..Default::default()
    };
    diagnostics.touches_box = search
        .tested
        .iter()
        .any(|(key, t)| t.accepted && key.iter().any(|c| c.abs() + step > limit));
    let mut dropped = BTreeSet::new();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for t in search.tested.into_values() {
        diagnostics.clipped_points += t.clipped as usize;
        diagnostics.saturated_points += (t.saturated_rows > 0) as usize;
        dropped.extend(t.dropped.iter().copied());
        let gp = GridPoint { psi: t.psi, q: t.q, critical: t.critical };
        if t.accepted {
            accepted.push(gp);
        } else {
            rejected.push(gp);
        }
    }
    diagnostics.dropped_moments = dropped.into_iter().map(|l| diagnostics.moment_labels[l].clone()).collect();
    let grid_step = spacing.iter().map(|&h| h * T::of(step as f64 / base as f64)).collect();
    Ok(ConfidenceSet { accepted, rejected, grid_step, alpha: opts.alpha, runtime_seconds: clock.elapsed().as_secs_f64(), diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbourhood_has_3k_minus_1_points() {
        let n = neighbours(&[0, 4], 2);
        assert_eq!(n.len(), 8);
        assert!(n.contains(&vec![-2, 6]) && n.contains(&vec![2, 4]));
        assert!(!n.contains(&vec![0, 4]));
        assert_eq!(neighbours(&[0, 0, 0], 1).len(), 26);
    }

    #[test]
    fn halving_keeps_lattice_points() {
        let l = Lattice { origin: vec![1.0, 2.0], unit: vec![0.5 / (1u64 << LATTICE_BITS) as f64, 1.0 / (1u64 << LATTICE_BITS) as f64] };
        let base = 1i64 << LATTICE_BITS;
        assert_eq!(l.coords(&[base, -base]), vec![1.5, 1.0]);
        assert_eq!(l.coords(&[base / 2, 0]), vec![1.25, 2.0]);
    }
}
