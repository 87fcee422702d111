//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All matrix code is written against [`Scalar`], which is satisfied by `f32`
//! and `f64`. The tolerances used throughout the solvers assume double
//! precision; `f32` instantiations compile and run but will not meet them.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the solvers.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Converts a count or index.
    #[inline]
    fn of_usize(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon.
    #[inline]
    fn eps() -> Self {
        <Self as approx::AbsDiffEq>::default_epsilon()
    }

    #[inline]
    fn is_finite_val(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}

/// Sums a slice in fixed-size chunks so the result does not depend on the
/// number of worker threads.
pub(crate) fn det_sum<T: Scalar>(values: &[T], f: impl Fn(T) -> T + Sync) -> T {
    use rayon::prelude::*;
    const CHUNK: usize = 4096;
    let partials: Vec<T> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().fold(T::zero(), |acc, &v| acc + f(v)))
        .collect();
    partials.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Same as [`det_sum`] over pairs of equally long slices.
pub(crate) fn det_sum2<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T + Sync) -> T {
    use rayon::prelude::*;
    const CHUNK: usize = 4096;
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<T> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).fold(T::zero(), |acc, (&u, &v)| acc + f(u, v)))
        .collect();
    partials.into_iter().fold(T::zero(), |acc, v| acc + v)
}
