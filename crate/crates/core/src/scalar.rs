//! Scalar abstraction shared by every estimator.
//!
//! All numerical code in this crate is written against [`Real`], which is
//! implemented for `f32` and `f64`. Double precision is the reference type:
//! the accuracy targets documented on the normal kernels and the default
//! convergence tolerances assume `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable by the estimators.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Gradient max-norm below which Newton-type fits are declared converged.
    const GRAD_TOL: f64;

    /// Complementary error function, accurate to a few ulps.
    fn erfc(self) -> Self;

    /// Converts an `f64` literal. Values outside the target range saturate.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const GRAD_TOL: f64 = 1e-8;

    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Real for f32 {
    const GRAD_TOL: f64 = 5e-2;

    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}
