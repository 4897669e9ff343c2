//! Scalar abstraction shared by every numeric kernel.

use std::fmt::{Debug, Display};

use nalgebra::RealField;

/// Floating point scalar: `f32` or `f64`.
///
/// All math in this crate is written against `Real`; nalgebra's `RealField`
/// supplies the elementary functions, this trait adds literal conversion.
pub trait Real: RealField + Copy + Debug + Display + Send + Sync + 'static {
    /// Machine epsilon of the concrete type.
    const EPS: Self;

    fn lit(v: f64) -> Self;

    fn to_f64(self) -> f64;

    fn from_count(v: usize) -> Self {
        Self::lit(v as f64)
    }

    fn is_finite_val(self) -> bool {
        self.to_f64().is_finite()
    }

    #[allow(clippy::eq_op)]
    fn is_nan_val(self) -> bool {
        self != self
    }
}

impl Real for f64 {
    const EPS: Self = f64::EPSILON;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}

impl Real for f32 {
    const EPS: Self = f32::EPSILON;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}
