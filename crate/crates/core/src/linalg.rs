//! Small dense decompositions on top of `nalgebra` storage.
//!
//! The matrices in this crate are tiny (information matrices of a handful of
//! parameters, moment correlation matrices of a few dozen moments), so plain
//! textbook algorithms are used and kept generic over [`Real`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cholesky factor of a symmetric positive definite matrix, or `None` when a
/// pivot is not strictly positive.
pub fn cholesky_spd<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve<T: Real>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let l = cholesky_spd(a).ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    let mut inv = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::<T>::zeros(n);
        e[j] = T::one();
        let col = cholesky_solve(&l, &e);
        inv.set_column(j, &col);
    }
    Ok(symmetrize(&inv))
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let half = T::of(0.5);
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)]) * half)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as columns.
pub fn symmetric_eigen<T: Real>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = a.nrows();
    let mut m = symmetrize(a);
    let mut v = DMatrix::<T>::identity(n, n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += m[(i, i)] * m[(i, i)];
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (DVector::from_fn(n, |i, _| m[(i, i)]), v)
}

/// Symmetric square root with eigenvalues clipped from below at `floor`.
///
/// The flag reports whether any eigenvalue was below `-neg_tol` before
/// clipping, i.e. whether the input was materially indefinite.
pub fn symmetric_sqrt<T: Real>(a: &DMatrix<T>, floor: T, neg_tol: T) -> (DMatrix<T>, bool) {
    let n = a.nrows();
    let (vals, vecs) = symmetric_eigen(a);
    let clipped = vals.iter().any(|&l| l < -neg_tol);
    let roots: Vec<T> = vals.iter().map(|&l| l.max(floor).sqrt()).collect();
    let mut out = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = T::zero();
            for (k, &r) in roots.iter().enumerate() {
                s += vecs[(i, k)] * r * vecs[(j, k)];
            }
            out[(i, j)] = s;
        }
    }
    (out, clipped)
}

/// Least-squares fit of `y` on the columns of `w` via the normal equations.
///
/// Returns the coefficients and `(WᵀW)⁻¹`. A vanishing Cholesky pivot reports
/// the offending column index.
pub fn least_squares<T: Real>(w: &DMatrix<T>, y: &DVector<T>) -> std::result::Result<(DVector<T>, DMatrix<T>), usize> {
    let p = w.ncols();
    let wtw = w.transpose() * w;
    let wty = w.transpose() * y;
    // relative pivot test catches exact and numerically exact collinearity
    let n = p;
    let mut l = DMatrix::<T>::zeros(n, n);
    let tol = T::of(1e-10);
    for j in 0..n {
        let mut d = wtw[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol * wtw[(j, j)]) || !(d > T::zero()) {
            return Err(j);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = wtw[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    let mut coef = cholesky_solve(&l, &wty);
    // one step of iterative refinement tightens the orthogonality of residuals
    let r = y - w * &coef;
    coef += cholesky_solve(&l, &(w.transpose() * r));
    let mut inv = DMatrix::<T>::zeros(p, p);
    for j in 0..p {
        let mut e = DVector::<T>::zeros(p);
        e[j] = T::one();
        inv.set_column(j, &cholesky_solve(&l, &e));
    }
    Ok((coef, symmetrize(&inv)))
}
