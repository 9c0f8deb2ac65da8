//! Normal-distribution kernels, covariance factorization and seeded sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Beyond this magnitude the tail ratios switch to a continued fraction.
const TAIL_SWITCH: f64 = 8.0;

/// Which tail an inverse Mills ratio refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// `φ(x) / Φ(x)`
    Lower,
    /// `φ(x) / (1 − Φ(x))`
    Upper,
}

fn check_finite<T: Real>(x: T, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} requires a finite argument, got {x}")))
    }
}

/// Standard normal density.
pub fn normal_pdf<T: Real>(x: T) -> Result<T> {
    check_finite(x, "normal_pdf")?;
    Ok(pdf(x))
}

/// Standard normal CDF.
pub fn normal_cdf<T: Real>(x: T) -> Result<T> {
    check_finite(x, "normal_cdf")?;
    Ok(cdf(x))
}

/// Inverse Mills ratio for the requested tail.
pub fn inverse_mills<T: Real>(x: T, tail: Tail) -> Result<T> {
    check_finite(x, "inverse_mills")?;
    Ok(match tail {
        Tail::Upper => upper_mills(x),
        Tail::Lower => lower_mills(x),
    })
}

/// Unchecked density; propagates NaN.
#[inline]
pub fn pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() * T::of(0.5);
    inv_sqrt_2pi * (-(x * x) * T::of(0.5)).exp()
}

/// Unchecked CDF, `Φ(x) = erfc(−x/√2)/2`.
#[inline]
pub fn cdf<T: Real>(x: T) -> T {
    (-x * T::FRAC_1_SQRT_2()).erfc() * T::of(0.5)
}

#[inline]
fn ln_pdf<T: Real>(x: T) -> T {
    // −x²/2 − ln √(2π)
    -(x * x) * T::of(0.5) - T::of(0.918_938_533_204_672_7)
}

/// `(1 − Φ(t)) / φ(t)` for large positive `t`, by backward evaluation of
/// Laplace's continued fraction `1/(t + 1/(t + 2/(t + 3/(t + …))))`.
fn mills_cf<T: Real>(t: T) -> T {
    let mut f = t;
    for k in (1..=64).rev() {
        f = t + T::of(k as f64) / f;
    }
    T::one() / f
}

/// `φ(x) / (1 − Φ(x))`, finite and accurate well past `x = 38`.
#[inline]
pub fn upper_mills<T: Real>(x: T) -> T {
    if x > T::of(TAIL_SWITCH) {
        T::one() / mills_cf(x)
    } else {
        pdf(x) / cdf(-x)
    }
}

/// `φ(x) / Φ(x)`.
#[inline]
pub fn lower_mills<T: Real>(x: T) -> T {
    upper_mills(-x)
}

/// `ln Φ(x)` without underflow in the lower tail.
#[inline]
pub fn ln_cdf<T: Real>(x: T) -> T {
    if x < -T::of(TAIL_SWITCH) {
        ln_pdf(x) + mills_cf(-x).ln()
    } else if x > T::zero() {
        (-cdf(-x)).ln_1p()
    } else {
        cdf(x).ln()
    }
}

/// Symmetric positive semi-definite covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix<T: Real> {
    entries: DMatrix<T>,
}

impl<T: Real> CovarianceMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        let dim = entries.nrows();
        if dim == 0 || entries.ncols() != dim {
            return Err(Error::InvalidSpec(format!(
                "covariance must be square with dim >= 1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("covariance has non-finite entries".into()));
        }
        let mut asym = 0.0f64;
        for i in 0..dim {
            for j in 0..i {
                asym = asym.max((entries[(i, j)] - entries[(j, i)]).abs().as_f64());
            }
        }
        if asym > 1e-12 {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(CovarianceMatrix { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidSpec("covariance rows must all have length dim".into()));
        }
        Self::new(DMatrix::from_fn(dim, dim, |i, j| T::of(rows[i][j])))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    /// `aᵀ Σ b`.
    pub fn bilinear(&self, a: &DVector<T>, b: &DVector<T>) -> T {
        (a.transpose() * &self.entries * b)[(0, 0)]
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = S`.
///
/// Semi-definite inputs are accepted: a pivot that is zero up to rounding
/// zeroes its column, so degenerate components are sampled as exact zeros.
pub fn cholesky<T: Real>(s: &CovarianceMatrix<T>) -> Result<DMatrix<T>> {
    let a = s.entries();
    let n = s.dim();
    let scale = T::one() + a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let neg_tol = T::of(1e-10);
    let zero_tol = T::of(1e-12) * scale;
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -neg_tol {
            return Err(Error::NotPsd { pivot: j, value: d.as_f64() });
        }
        if d <= zero_tol {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / djj;
        }
    }
    Ok(l)
}

/// Seeded random stream: ChaCha8 keyed by `seed` with an explicit stream id.
///
/// Identical `(seed, stream)` pairs replay identical sequences; distinct
/// stream ids select disjoint keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream sharing this seed.
    pub fn substream(&self, stream: u64) -> RngStream {
        RngStream::new(self.seed, stream)
    }

    pub fn standard_normal<T: Real>(&mut self) -> T {
        let z: f64 = self.inner.sample(StandardNormal);
        T::of(z)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `n` rows of i.i.d. `N(0, L Lᵀ)` draws.
pub fn mvn_sample<T: Real>(l: &DMatrix<T>, n: usize, rng: &mut RngStream) -> DMatrix<T> {
    let dim = l.nrows();
    let mut out = DMatrix::<T>::zeros(n, dim);
    let mut z = vec![T::zero(); dim];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.standard_normal();
        }
        for r in 0..dim {
            let mut v = T::zero();
            for (c, &zc) in z.iter().enumerate().take(r + 1) {
                v += l[(r, c)] * zc;
            }
            out[(i, r)] = v;
        }
    }
    out
}

/// Sample covariance (1/n) of the columns of `m`.
pub fn sample_covariance<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = T::of(m.nrows() as f64);
    let means: Vec<T> = m.column_iter().map(|c| c.sum() / n).collect();
    let k = m.ncols();
    DMatrix::from_fn(k, k, |a, b| {
        m.column(a)
            .iter()
            .zip(m.column(b).iter())
            .map(|(&x, &y)| (x - means[a]) * (y - means[b]))
            .sum::<T>()
            / n
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // reference values: mpmath at 50 significant digits
    const CDF_REF: &[(f64, f64)] = &[
        (1.0, 0.841_344_746_068_542_948_585_232_5),
        (-1.0, 0.158_655_253_931_457_051_414_767_5),
        (0.5, 0.691_462_461_274_013_103_637_704_6),
        (3.0, 0.998_650_101_968_369_905_473_348_2),
        (-3.0, 0.001_349_898_031_630_094_526_651_815),
        (1.959964, 0.975_000_000_903_557_595_697_504_9),
        (6.0, 0.999_999_999_013_412_354_962_301_9),
    ];

    #[test]
    fn pdf_values() {
        assert_relative_eq!(normal_pdf(0.0).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(normal_pdf(1.0).unwrap(), 0.241_970_724_519_143_35, epsilon = 1e-15);
        assert_eq!(normal_pdf(-1.0).unwrap(), normal_pdf(1.0).unwrap());
        assert!(normal_pdf(f64::NAN).is_err());
        assert!(normal_pdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_matches_high_precision_reference() {
        assert_eq!(normal_cdf(0.0).unwrap(), 0.5);
        for &(x, want) in CDF_REF {
            let got = normal_cdf(x).unwrap();
            assert!((got - want).abs() <= 1e-12, "x={x}: {got} vs {want}");
        }
        assert!((normal_cdf(1.959964f64).unwrap() - 0.975).abs() < 1e-8);
    }

    #[test]
    fn cdf_lower_tail_does_not_underflow() {
        let v = normal_cdf(-8.0).unwrap();
        assert!(v > 0.0);
        assert_relative_eq!(v, 6.220_960_574_271_784e-16, max_relative = 1e-12);
        assert_relative_eq!(normal_cdf(-20.0).unwrap(), 2.753_624_118_606_233_7e-89, max_relative = 1e-12);
        assert!(normal_cdf(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn mills_reference_values() {
        assert_relative_eq!(inverse_mills(0.0, Tail::Lower).unwrap(), 0.797_884_560_802_865_4, epsilon = 1e-15);
        let cases: &[(f64, f64)] = &[
            (5.0, 5.186_503_967_125_842),
            (1.0, 1.525_135_276_160_981_2),
            (2.0, 2.373_215_532_822_840_9),
            (8.0, 8.121_368_112_236_113),
            (10.0, 10.098_093_233_962_512),
            (12.5, 12.579_007_304_406_976),
            (20.0, 20.049_753_068_527_85),
            (38.0, 38.026_279_466_575_87),
            (-2.0, 0.055_247_862_678_989_96),
            (-5.0, 1.486_719_940_904_905_7e-6),
            (-30.0, 1.473_646_134_878_547_5e-196),
        ];
        for &(x, want) in cases {
            let got = inverse_mills(x, Tail::Upper).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-11);
            assert_eq!(inverse_mills(-x, Tail::Lower).unwrap(), got);
        }
    }

    #[test]
    fn ln_cdf_reference_values() {
        let cases: &[(f64, f64)] = &[
            (-40.0, -804.608_442_013_753_8),
            (-38.0, -726.557_216_018_820_1),
            (-10.0, -53.231_285_150_512_47),
            (-8.5, -39.197_396_428_217_67),
            (-1.0, -1.841_021_645_009_263_5),
            (3.0, -0.001_350_809_964_748_193_8),
        ];
        for &(x, want) in cases {
            assert_relative_eq!(ln_cdf(x), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn cdf_grid_monotone_and_differentiable() {
        let h = 1e-5;
        let mut prev = 0.0;
        for i in 0..10_000 {
            let x = -8.0 + 16.0 * i as f64 / 9_999.0;
            let c = cdf(x);
            assert!(c >= prev);
            prev = c;
            let d = (cdf(x + h) - cdf(x - h)) / (2.0 * h);
            assert!((d - pdf(x)).abs() <= 1e-6, "x={x}");
            assert!((cdf(x) + cdf(-x) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn single_precision_kernels() {
        assert!((normal_cdf(1.0f32).unwrap() - 0.841_344_7).abs() < 1e-6);
        assert!((inverse_mills(5.0f32, Tail::Upper).unwrap() - 5.186_504).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn mills_bounds_and_monotone(x in 1.0f64..37.0, dx in 1e-3f64..1.0) {
            let m = upper_mills(x);
            prop_assert!(x < m && m < x + 1.0 / x);
            prop_assert!(upper_mills(x + dx) > m);
        }
    }

    #[test]
    fn cholesky_cases() {
        let id = CovarianceMatrix::new(DMatrix::<f64>::identity(3, 3)).unwrap();
        assert_eq!(cholesky(&id).unwrap(), DMatrix::identity(3, 3));
        let d = CovarianceMatrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(cholesky::<f64>(&d).unwrap(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn cholesky_reconstructs_endogenous_design() {
        let rows = vec![
            vec![9.0, 0.0, 0.0, -4.0, 0.0],
            vec![0.0, 9.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 27.0, -5.0, 9.0],
            vec![-4.0, 0.0, -5.0, 9.0, 0.0],
            vec![0.0, 0.0, 9.0, 0.0, 16.0],
        ];
        let s = CovarianceMatrix::<f64>::from_rows(&rows).unwrap();
        let l = cholesky(&s).unwrap();
        let back = &l * l.transpose();
        for i in 0..5 {
            for j in 0..5 {
                assert!((back[(i, j)] - rows[i][j]).abs() <= 1e-8 * 28.0);
                if j > i {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn cholesky_semidefinite_and_indefinite() {
        let s = CovarianceMatrix::from_rows(&[vec![4.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 4.0]]).unwrap();
        let l = cholesky::<f64>(&s).unwrap();
        assert_eq!(l.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        let bad = CovarianceMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky::<f64>(&bad), Err(Error::NotPsd { pivot: 1, .. })));
        assert!(CovarianceMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).map(|_: CovarianceMatrix<f64>| ()).is_err());
    }

    #[test]
    fn mvn_sample_covariance_and_determinism() {
        let s = CovarianceMatrix::from_rows(&[
            vec![4.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.0, 2.0],
        ])
        .unwrap();
        let l = cholesky::<f64>(&s).unwrap();
        let m = mvn_sample(&l, 200_000, &mut RngStream::new(11, 0));
        let c = sample_covariance(&m);
        for i in 0..4 {
            for j in 0..4 {
                assert!((c[(i, j)] - s.get(i, j)).abs() <= 0.05, "({i},{j}) {}", c[(i, j)]);
            }
        }
        let a = mvn_sample(&l, 50, &mut RngStream::new(3, 9));
        let b = mvn_sample(&l, 50, &mut RngStream::new(3, 9));
        assert_eq!(a, b);
        let zero = mvn_sample(&DMatrix::<f64>::zeros(3, 3), 10, &mut RngStream::new(1, 1));
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 100_000;
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n as f64;
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n as f64;
        assert!((cov / (vx * vy).sqrt()).abs() <= 0.02);
    }
}
