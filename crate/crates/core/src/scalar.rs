//! Scalar abstraction shared by every numerical kernel in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only for values the type cannot represent at all (NaN is kept).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + LowerExp
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Tolerance that scales with the precision of `T`: `max(floor, factor * eps)`.
#[inline]
pub fn precision_tol<T: Real>(floor: f64, factor: f64) -> T {
    let eps = T::epsilon();
    T::lit(floor).max(T::lit(factor) * eps)
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm2<T: Real>(v: &[T]) -> T {
    // scaled to survive large magnitudes
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return scale;
    }
    let s: T = v.iter().map(|x| (*x / scale) * (*x / scale)).sum();
    scale * s.sqrt()
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

#[inline]
pub fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Shortest round-trip decimal rendering used by every CSV artifact.
pub fn fmt_real<T: Real>(x: T) -> String {
    let v = x.as_f64();
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_handles_huge_entries() {
        let v = [3e200_f64, 4e200];
        assert!((norm2(&v) / 5e200 - 1.0).abs() < 1e-15);
        assert_eq!(norm2::<f64>(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn fmt_round_trips() {
        for x in [0.1_f64, -14.572, 1e-300, 6.02e23, 0.0, 2.0 / 3.0, 1e-5] {
            let s = fmt_real(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn tolerance_tracks_precision() {
        assert_eq!(precision_tol::<f64>(1e-6, 1e3), 1e-6);
        assert!(precision_tol::<f32>(1e-6, 1e3) > 1e-5);
    }
}
