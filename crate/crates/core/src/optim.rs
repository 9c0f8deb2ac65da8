//! Derivative-free minimization.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop once the spread of function values over the simplex is below this.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iter: 500, f_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult<T: Real> {
    pub x: Vec<T>,
    pub fx: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Standard Nelder–Mead (reflection 1, expansion 2, contraction ½,
/// shrink ½) from the simplex `x0, x0 + steps[k]·e_k`.
///
/// Non-finite values are treated as +∞. Ties keep the earlier vertex, so a
/// flat start returns `x0` unchanged.
pub fn nelder_mead<T: Real, F>(f: F, x0: &[T], steps: &[T], opts: &NelderMeadOptions) -> NelderMeadResult<T>
where
    F: Fn(&[T]) -> T,
{
    let dim = x0.len();
    let eval = |x: &[T]| {
        let v = f(x);
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for k in 0..dim {
        let mut x = x0.to_vec();
        x[k] += steps[k];
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let half = T::of(0.5);
    let two = T::of(2.0);
    let combine = |a: &[T], b: &[T], t: T| -> Vec<T> { a.iter().zip(b).map(|(&ai, &bi)| ai + t * (bi - ai)).collect() };

    let mut iterations = 0;
    let mut converged = false;
    loop {
        // stable sort keeps earlier vertices ahead on ties
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (best, worst) = (simplex[0].1, simplex[dim].1);
        if worst - best <= T::of(opts.f_tol) || (best.is_infinite() && worst.is_infinite() && best > T::zero()) {
            converged = worst - best <= T::of(opts.f_tol);
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![T::zero(); dim];
        for (x, _) in &simplex[..dim] {
            for (c, &xi) in centroid.iter_mut().zip(x) {
                *c += xi;
            }
        }
        let inv = T::one() / T::of(dim as f64);
        centroid.iter_mut().for_each(|c| *c *= inv);

        let worst_x = simplex[dim].0.clone();
        let reflected = combine(&centroid, &worst_x, -T::one());
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst_x, -two);
            let fe = eval(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[dim].1 {
            let c = combine(&centroid, &reflected, half);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = combine(&centroid, &worst_x, half);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < fr.min(simplex[dim].1) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x = combine(&best_x, &v.0, half);
            let fx = eval(&x);
            *v = (x, fx);
        }
    }
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult { x, fx, iterations, converged }
}
